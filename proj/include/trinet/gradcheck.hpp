#ifndef TRINET_GRADCHECK_HPP
#define TRINET_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "trinet/tape.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

struct GradCheckResult {
  /// Worst per-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t evaluations = 0;
};

/// Compares reverse-mode gradients of the scalar `loss` with central
/// differences. `loss` must build its graph from `inputs` via
/// tape.parameter(), so the same closure serves both passes.
inline GradCheckResult gradcheck(const std::vector<Tensor<double>*>& inputs,
                                 const std::function<Var<double>(Tape<double>&)>& loss, double step = 1e-6) {
  for (Tensor<double>* t : inputs) {
    t->drop_grad();
    t->ensure_grad();
  }
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  const auto eval = [&] {
    Tape<double> tape(false);
    return loss(tape).value()[0];
  };
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& t = *inputs[k];
    const std::vector<double> analytic(std::as_const(t).grad().begin(), std::as_const(t).grad().end());
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t[i];
      t[i] = keep + step;
      const double up = eval();
      t[i] = keep - step;
      const double down = eval();
      t[i] = keep;
      res.evaluations += 2;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double scale = std::sqrt(std::max(a2, n2));
    const double rel = scale > 0.0 ? std::sqrt(diff2) / scale : 0.0;
    if (rel > res.max_rel_error || std::isnan(rel)) {
      res.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      res.worst_tensor = k;
    }
  }
  for (Tensor<double>* t : inputs) t->drop_grad();
  return res;
}

}  // namespace trinet

#endif  // TRINET_GRADCHECK_HPP
