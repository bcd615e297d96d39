#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "trinet/optim.hpp"
#include "trinet/synthetic.hpp"
#include "trinet/trainer.hpp"

using namespace trinet;

TEST(Adam, TwoStepsMatchHandComputedUpdate) {
  Tensor<double> w(Shape{1, 1, 1, 2}, {1.0, -2.0});
  std::vector<NamedTensor<double>> params{{"w", &w, TensorRole::parameter, "layer1"}};
  AdamState<double> st(params);
  const double lr = 0.01;
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  const double grads[2][2] = {{0.5, -1.5}, {0.25, 2.0}};
  for (int t = 1; t <= 2; ++t) {
    w.grad()[0] = grads[t - 1][0];
    w.grad()[1] = grads[t - 1][1];
    adam_step(params, st, lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grads[t - 1][i];
      v[i] = 0.999 * v[i] + 0.001 * grads[t - 1][i] * grads[t - 1][i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w[i], x[i], 1e-15);
    }
  }
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
  Tensor<float> w(Shape{1, 1, 1, 3}, {0.f, 0.f, 0.f});
  std::vector<NamedTensor<float>> params{{"w", &w, TensorRole::parameter, "layer1"}};
  AdamState<float> st(params);
  w.grad()[0] = 3.f;
  w.grad()[1] = -0.001f;
  w.grad()[2] = 0.f;
  adam_step(params, st, 0.1);
  EXPECT_NEAR(w[0], -0.1f, 1e-6f);
  EXPECT_NEAR(w[1], 0.1f, 1e-4f);
  EXPECT_EQ(w[2], 0.f);
}

TEST(Adam, MismatchedStateIsRejected) {
  Tensor<float> a(Shape{1, 1, 1, 2}), b(Shape{1, 1, 1, 3});
  std::vector<NamedTensor<float>> pa{{"a", &a, TensorRole::parameter, "layer1"}};
  std::vector<NamedTensor<float>> pb{{"b", &b, TensorRole::parameter, "layer1"}};
  AdamState<float> st(pa);
  EXPECT_THROW(adam_step(pb, st, 0.1), UsageError);
}

TEST(Schedule, ExponentialDecayPerEpoch) {
  TrainPlan p;
  EXPECT_DOUBLE_EQ(lr_at(p, 0), 0.0008);
  EXPECT_NEAR(lr_at(p, 1), 0.0008 * 0.94, 1e-18);
  EXPECT_NEAR(lr_at(p, 59), 0.0008 * std::pow(0.94, 59), 1e-18);
  EXPECT_THROW(lr_at(p, 60), UsageError);
  EXPECT_EQ(p.epochs, 60u);
  EXPECT_EQ(p.batch_size, 64u);
}

namespace {

struct TinySetup {
  std::vector<FundusSample> samples = generate_synthetic_dataset(2, 5, SyntheticOptions{64, 64});
  ChannelStats stats = compute_channel_stats(samples);
  TrainValPlans plans = sample_training_patches(samples, 3, 6, 2, 32);
};

TrainHistory run_tiny(std::uint64_t seed) {
  TinySetup s;
  TriNetwork<float> net(TriNetworkConfig::narrowed(8));
  he_init(net, seed);
  TrainPlan plan;
  plan.epochs = 2;
  plan.batch_size = 3;
  plan.seed = seed;
  Trainer<float> trainer(net, plan);
  const JitterParams jitter;
  return trainer.train({s.samples, s.plans.train, s.stats, &jitter}, {s.samples, s.plans.val, s.stats, nullptr});
}

}  // namespace

TEST(Trainer, FixedSeedReproducesHistory) {
  const TrainHistory a = run_tiny(11), b = run_tiny(11);
  ASSERT_EQ(a.epochs.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss);
    EXPECT_EQ(a.epochs[i].val_loss, b.epochs[i].val_loss);
    EXPECT_EQ(a.epochs[i].lr, lr_at(TrainPlan{}, i));
  }
  std::ostringstream os;
  a.write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "epoch,lr,train_loss,val_loss");
}

TEST(Trainer, EpochOrderIsAPermutationThatChangesPerEpoch) {
  TriNetwork<float> net(TriNetworkConfig::narrowed(8));
  Trainer<float> trainer(net, TrainPlan{});
  auto o0 = trainer.epoch_order(50, 0), o1 = trainer.epoch_order(50, 1);
  EXPECT_NE(o0, o1);
  std::sort(o0.begin(), o0.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(o0[i], i);
}

TEST(Trainer, NonFiniteLossRaisesNumericalError) {
  TriNetwork<float> net(TriNetworkConfig::narrowed(8));
  he_init(net, 1);
  Trainer<float> trainer(net, TrainPlan{});
  Batch<float> batch{Tensor<float>(Shape{2, 3, 16, 16}, std::numeric_limits<float>::quiet_NaN()),
                     Tensor<float>(Shape{2, 1, 16, 16}, 0.f)};
  EXPECT_THROW(trainer.step(batch, 0.001), NumericalError);
}

TEST(Trainer, StepLowersLossOnRepeatedBatch) {
  TinySetup s;
  TriNetwork<float> net(TriNetworkConfig::narrowed(4));
  he_init(net, 2);
  Trainer<float> trainer(net, TrainPlan{});
  std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto batch = assemble_batch<float>(s.samples, s.plans.train, idx, s.stats);
  const double first = trainer.step(batch, 0.003);
  double last = first;
  for (int i = 0; i < 15; ++i) last = trainer.step(batch, 0.003);
  EXPECT_LT(last, first);
}
