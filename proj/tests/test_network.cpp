#include <gtest/gtest.h>

#include <cmath>
#include <iostream>
#include <map>

#include "support.hpp"
#include "trinet/network.hpp"

using namespace trinet;

namespace {

std::size_t enumerate_trainable(TriNetwork<float>& net) {
  std::size_t n = 0;
  net.visit([&](const std::string&, Tensor<float>& t, TensorRole role, const std::string&) {
    if (role == TensorRole::parameter) n += t.size();
  });
  return n;
}

Tensor<float> random_image(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  auto d = testing_support::random_tensor({n, 3, h, w}, seed, -0.5, 0.5);
  return d.cast<float>();
}

}  // namespace

TEST(SubNetworkConfig, ChannelScheduleOfTheStandardArchitecture) {
  const SubNetworkConfig cfg;
  EXPECT_EQ(cfg.layer_filters(), (std::vector<std::size_t>{8, 16, 32, 64, 128, 64, 32, 16, 8, 1}));
  EXPECT_EQ(cfg.upsampling_filters(), (std::vector<std::size_t>{64, 32, 16, 8}));
  EXPECT_EQ(cfg.size_multiple(), 16u);
}

TEST(ModuleBlock, StructurePerFilterKind) {
  const auto b1 = build_module_block<float>({FilterKind::k1x1, 8, 8, 8}, "b", "layer1");
  const auto b3 = build_module_block<float>({FilterKind::k3x3, 8, 16, 16}, "b", "layer1");
  const auto b5 = build_module_block<float>({FilterKind::k5x5_factorized, 16, 16, 16}, "b", "layer1");
  EXPECT_EQ(b1.conv_count(), 1u);
  EXPECT_FALSE(b1.projection.has_value());
  EXPECT_EQ(b3.conv_count(), 3u);
  EXPECT_TRUE(b3.projection.has_value());
  EXPECT_EQ(b5.conv_count(), 3u);
  EXPECT_EQ(b5.main.size(), 2u);
  for (const auto& u : b5.main) EXPECT_EQ(u.kernel, 3u);
}

TEST(ModuleBlock, IdentityShortcutIsResidual) {
  auto block = build_module_block<double>({FilterKind::k1x1, 2, 2, 2}, "b", "layer1");
  block.main[0].weight.fill(0.0);
  block.main[0].bias.fill(0.0);
  auto x = testing_support::random_tensor({2, 2, 2, 2}, 3);
  Tape<double> tape(false);
  auto y = block.forward(tape, tape.constant(x), Mode::train);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.value()[i], x[i]);
}

TEST(TriNetwork, OutputShapeAndRangeAcrossInputSizes) {
  TriNetwork<float> net;
  he_init(net, 42);
  for (std::size_t size : {32u, 64u, 96u, 128u}) {
    auto maps = net.infer(random_image(1, size, size, size));
    EXPECT_EQ(maps.probability.shape(), (Shape{1, 1, size, size}));
    for (float p : maps.probability.data()) {
      ASSERT_GT(p, 0.0f);
      ASSERT_LT(p, 1.0f);
    }
    for (const auto& b : maps.branches) {
      EXPECT_EQ(b.shape(), (Shape{1, 1, size, size}));
      for (float v : b.data()) ASSERT_GE(v, 0.0f);
    }
  }
}

TEST(TriNetwork, RejectsIndivisibleOrWrongChannelInput) {
  TriNetwork<float> net(TriNetworkConfig::narrowed(8));
  he_init(net, 1);
  EXPECT_THROW(net.infer(random_image(1, 40, 40, 1)), ShapeError);
  EXPECT_THROW(net.infer(Tensor<float>(Shape{1, 1, 32, 32})), ShapeError);
}

TEST(TriNetwork, ParameterCountMatchesEnumerationAndFormula) {
  std::vector<TriNetworkConfig> configs{TriNetworkConfig{}, TriNetworkConfig::narrowed(2), TriNetworkConfig::narrowed(4),
                                        TriNetworkConfig::narrowed(8)};
  TriNetworkConfig odd;
  odd.encoder = {4, 12};
  odd.bottleneck = 10;
  configs.push_back(odd);
  for (const auto& cfg : configs) {
    TriNetwork<float> net(cfg);
    const ParameterCount pc = count_parameters(net);
    EXPECT_EQ(pc.total, enumerate_trainable(net));
    EXPECT_EQ(pc.total, parameter_formula(cfg));
    std::size_t sum = 0;
    for (const auto& l : pc.per_layer) sum += l.count;
    EXPECT_EQ(sum, pc.total);
  }
}

TEST(TriNetwork, FullConfigurationTable) {
  TriNetwork<float> net;
  const ParameterCount pc = count_parameters(net);
  ASSERT_EQ(pc.per_layer.size(), 11u);
  EXPECT_EQ(pc.per_layer.front().layer, "layer1");
  EXPECT_EQ(pc.per_layer.back().layer, "layer11");
  EXPECT_EQ(pc.total, 1059193u);
  std::cout << format_parameter_table(pc);
}

TEST(TriNetwork, TensorNamesAreUniqueAndRolesSplit) {
  TriNetwork<float> net(TriNetworkConfig::narrowed(4));
  std::map<std::string, int> seen;
  std::size_t stats = 0;
  for (const auto& nt : net.tensors()) {
    EXPECT_EQ(seen[nt.name]++, 0) << nt.name;
    if (nt.role == TensorRole::running_stat) ++stats;
  }
  EXPECT_EQ(stats, net.tensors().size() - net.parameters().size());
  EXPECT_GT(stats, 0u);
}

TEST(HeInit, GaussianWithFanInVarianceAndDeterministic) {
  TriNetwork<double> a, b;
  he_init(a, 9);
  he_init(b, 9);
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    ASSERT_EQ(ta[i].tensor->storage(), tb[i].tensor->storage()) << ta[i].name;
  }
  for (const auto& nt : ta) {
    const std::string& n = nt.name;
    if (n.ends_with(".bn.gamma") || n.ends_with(".bn.running_var")) {
      for (double v : nt.tensor->data()) ASSERT_EQ(v, 1.0) << n;
    } else if (!n.ends_with(".conv.weight")) {
      for (double v : nt.tensor->data()) ASSERT_EQ(v, 0.0) << n;
    } else if (nt.tensor->size() >= 8000) {
      const Shape s = nt.tensor->shape();
      const double target = 2.0 / static_cast<double>(s.c * s.h * s.w);
      double m = 0, v = 0;
      for (double x : nt.tensor->data()) m += x;
      m /= static_cast<double>(nt.tensor->size());
      for (double x : nt.tensor->data()) v += (x - m) * (x - m);
      v /= static_cast<double>(nt.tensor->size());
      EXPECT_NEAR(v / target, 1.0, 0.05) << n;
      EXPECT_NEAR(m, 0.0, 4 * std::sqrt(target / static_cast<double>(nt.tensor->size()))) << n;
    }
  }
}

TEST(TriNetwork, TrainingModeUpdatesRunningStatsOnly) {
  TriNetwork<float> net(TriNetworkConfig::narrowed(8));
  he_init(net, 3);
  const auto before = net.combiner().bn.running_mean.storage();
  const auto weights = net.combiner().weight.storage();
  Tape<float> tape(false);
  net.forward(tape, tape.constant(random_image(2, 16, 16, 4)), Mode::train);
  EXPECT_NE(net.combiner().bn.running_mean.storage(), before);
  EXPECT_EQ(net.combiner().weight.storage(), weights);
}
