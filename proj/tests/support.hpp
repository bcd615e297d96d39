#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "trinet/tape.hpp"
#include "trinet/tensor.hpp"

namespace testing_support {

using trinet::Shape;
using trinet::Tape;
using trinet::Tensor;
using trinet::Var;

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Relative error of reverse-mode against central differences, as the
/// worst over `leaves` of ||g_a - g_n|| / max(||g_a||, ||g_n||).
inline double fd_relative_error(std::vector<Tensor<double>*> leaves,
                                const std::function<Var<double>(Tape<double>&)>& f, double h = 1e-6) {
  for (auto* t : leaves) {
    t->drop_grad();
    t->ensure_grad();
  }
  {
    Tape<double> tape;
    tape.backward(f(tape));
  }
  double worst = 0.0;
  for (auto* t : leaves) {
    std::vector<double> g(t->grad().begin(), t->grad().end());
    double d2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double x0 = (*t)[i];
      (*t)[i] = x0 + h;
      double fp;
      {
        Tape<double> tp(false);
        fp = f(tp).value()[0];
      }
      (*t)[i] = x0 - h;
      double fm;
      {
        Tape<double> tm(false);
        fm = f(tm).value()[0];
      }
      (*t)[i] = x0;
      const double num = (fp - fm) / (2 * h);
      d2 += (g[i] - num) * (g[i] - num);
      a2 += g[i] * g[i];
      n2 += num * num;
    }
    const double s = std::sqrt(std::max(a2, n2));
    worst = std::max(worst, s > 0 ? std::sqrt(d2) / s : 0.0);
  }
  return worst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("trinet_tests_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path data_dir() { return TRINET_TEST_DATA; }

}  // namespace testing_support
