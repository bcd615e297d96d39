#ifndef TRINET_OPTIM_HPP
#define TRINET_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trinet/errors.hpp"
#include "trinet/network.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

/// Adam moments for a fixed, ordered list of parameters.
template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  AdamState() = default;
  explicit AdamState(const std::vector<NamedTensor<T>>& params) {
    for (const auto& p : params) {
      m.emplace_back(p.tensor->shape());
      v.emplace_back(p.tensor->shape());
    }
  }
};

/// One Adam update with bias correction over `params` (in registry order),
/// reading each parameter's gradient buffer. A parameter without a gradient
/// buffer is treated as having zero gradient.
template <typename T>
void adam_step(const std::vector<NamedTensor<T>>& params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw UsageError("adam_step: state holds " + std::to_string(state.m.size()) + " moments for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(state.m[i].shape() == params[i].tensor->shape()) || !(state.v[i].shape() == params[i].tensor->shape())) {
      throw UsageError("adam_step: moment shape mismatch for " + params[i].name);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].tensor;
    if (!p.has_grad()) continue;
    std::span<const T> g = std::as_const(p).grad();
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps);
      p[j] = static_cast<T>(p[j] - update);
    }
  }
}

/// Training schedule. Defaults are the published experimental setup.
struct TrainPlan {
  double base_lr = 0.0008;
  double decay = 0.94;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  /// Write the latest checkpoint every this many epochs (0 = only at the end).
  std::size_t checkpoint_every = 0;
};

/// Learning rate used throughout epoch `epoch` (0-based): base_lr * decay^epoch.
inline double lr_at(const TrainPlan& plan, std::size_t epoch) {
  if (epoch >= plan.epochs) {
    throw UsageError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(plan.epochs) + ")");
  }
  return plan.base_lr * std::pow(plan.decay, static_cast<double>(epoch));
}

}  // namespace trinet

#endif  // TRINET_OPTIM_HPP
