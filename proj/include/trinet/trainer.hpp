#ifndef TRINET_TRAINER_HPP
#define TRINET_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trinet/data.hpp"
#include "trinet/errors.hpp"
#include "trinet/network.hpp"
#include "trinet/ops.hpp"
#include "trinet/optim.hpp"

namespace trinet {

/// Patches of one split together with how to turn them into batches.
struct PatchSource {
  std::span<const FundusSample> samples;
  PatchPlan plan;
  ChannelStats stats;
  /// Photometric jitter applied per patch; null for no jitter.
  const JitterParams* jitter = nullptr;

  std::size_t size() const noexcept { return plan.anchors.size(); }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();

  void write_csv(std::ostream& os) const {
    os << "epoch,lr,train_loss,val_loss\n";
    os << std::setprecision(10);
    for (const EpochRecord& r : epochs) os << r.epoch + 1 << ',' << r.lr << ',' << r.train_loss << ',' << r.val_loss << '\n';
  }
};

template <typename T>
class Trainer {
 public:
  struct Callbacks {
    std::function<void(const EpochRecord&)> on_epoch;
    /// Called right after an epoch that improved the validation loss.
    std::function<void(TriNetwork<T>&, const EpochRecord&)> on_best;
    std::function<void(std::size_t step, double loss)> on_step;
  };

  Trainer(TriNetwork<T>& net, TrainPlan plan) : net_(net), plan_(plan), params_(net.parameters()), adam_(params_) {
    if (plan_.batch_size == 0) throw ConfigError("batch size must be positive");
    if (plan_.epochs == 0) throw ConfigError("epoch count must be positive");
    if (!(plan_.base_lr > 0.0) || !(plan_.decay > 0.0)) throw ConfigError("learning rate and decay must be positive");
  }

  AdamState<T>& adam() noexcept { return adam_; }
  const TrainPlan& plan() const noexcept { return plan_; }

  /// forward -> MSE -> backward -> Adam with the given learning rate.
  double step(const Batch<T>& batch, double lr) {
    net_.zero_grad();
    Tape<T> tape;
    TriOutput<T> out = net_.forward(tape, tape.constant(batch.images), Mode::train);
    Var<T> loss = mse_loss(out.probability, tape.constant(batch.targets));
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw NumericalError("non-finite training loss at step " + std::to_string(adam_.step + 1));
    tape.backward(loss);
    adam_step(params_, adam_, lr);
    return value;
  }

  /// Mean inference-mode MSE over all patches of `source` (no jitter,
  /// running statistics untouched).
  double evaluate_loss(const PatchSource& source) {
    if (source.size() == 0) throw DataError("validation set is empty");
    double total = 0.0;
    std::vector<std::size_t> idx(source.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t begin = 0; begin < idx.size(); begin += plan_.batch_size) {
      const std::size_t end = std::min(idx.size(), begin + plan_.batch_size);
      std::span<const std::size_t> chunk(idx.data() + begin, end - begin);
      Batch<T> batch = assemble_batch<T>(source.samples, source.plan, chunk, source.stats);
      Tape<T> tape(false);
      TriOutput<T> out = net_.forward(tape, tape.constant(batch.images), Mode::infer);
      Var<T> loss = mse_loss(out.probability, tape.constant(batch.targets));
      total += static_cast<double>(loss.value()[0]) * static_cast<double>(chunk.size());
    }
    const double mean = total / static_cast<double>(source.size());
    if (!std::isfinite(mean)) throw NumericalError("non-finite validation loss");
    return mean;
  }

  /// Seeded order of patch indices for `epoch`.
  std::vector<std::size_t> epoch_order(std::size_t n, std::size_t epoch) const {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(plan_.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  /// Full schedule: per epoch shuffle, mini-batches (last partial batch
  /// kept), learning rate lr_at(epoch), then validation loss.
  TrainHistory train(const PatchSource& train_set, const PatchSource& val_set, const Callbacks& cb = {}) {
    if (train_set.size() == 0) throw DataError("training set is empty");
    if (val_set.size() == 0) throw DataError("validation set is empty");
    TrainHistory history;
    for (std::size_t epoch = 0; epoch < plan_.epochs; ++epoch) {
      const double lr = lr_at(plan_, epoch);
      const auto order = epoch_order(train_set.size(), epoch);
      double loss_sum = 0.0;
      for (std::size_t begin = 0; begin < order.size(); begin += plan_.batch_size) {
        const std::size_t end = std::min(order.size(), begin + plan_.batch_size);
        std::span<const std::size_t> chunk(order.data() + begin, end - begin);
        Batch<T> batch = assemble_batch<T>(train_set.samples, train_set.plan, chunk, train_set.stats, train_set.jitter,
                                           mix_seed(plan_.seed ^ 0x6a09e667f3bcc908ULL, epoch));
        const double loss = step(batch, lr);
        loss_sum += loss * static_cast<double>(chunk.size());
        if (cb.on_step) cb.on_step(adam_.step, loss);
      }
      EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(order.size()), evaluate_loss(val_set)};
      history.epochs.push_back(rec);
      if (cb.on_epoch) cb.on_epoch(rec);
      if (rec.val_loss < history.best_val_loss) {
        history.best_val_loss = rec.val_loss;
        history.best_epoch = epoch;
        if (cb.on_best) cb.on_best(net_, rec);
      }
    }
    return history;
  }

 private:
  TriNetwork<T>& net_;
  TrainPlan plan_;
  std::vector<NamedTensor<T>> params_;
  AdamState<T> adam_;
};

}  // namespace trinet

#endif  // TRINET_TRAINER_HPP
