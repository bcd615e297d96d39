#ifndef TRINET_SELFTEST_HPP
#define TRINET_SELFTEST_HPP

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "trinet/checkpoint.hpp"
#include "trinet/data.hpp"
#include "trinet/evaluation.hpp"
#include "trinet/gradcheck.hpp"
#include "trinet/network.hpp"
#include "trinet/ops.hpp"

namespace trinet {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;

  bool passed() const {
    for (const auto& c : checks) {
      if (!c.passed) return false;
    }
    return !checks.empty();
  }
};

namespace detail {

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

struct OpCase {
  std::string name;
  std::vector<Tensor<double>> tensors;
  std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)> build;
};

inline std::vector<OpCase> op_cases(std::mt19937_64& rng) {
  std::vector<OpCase> cases;
  const auto R = [&](Shape s) { return random_tensor(s, rng); };
  cases.push_back({"conv2d 3x3 stride 1", {R({2, 2, 5, 5}), R({3, 2, 3, 3}), R({1, 3, 1, 1})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return conv2d(v[0], v[1], std::optional<Var<double>>(v[2]), 1, 1); }});
  cases.push_back({"conv2d 3x3 stride 2", {R({2, 2, 6, 6}), R({3, 2, 3, 3}), R({1, 3, 1, 1})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return conv2d(v[0], v[1], std::optional<Var<double>>(v[2]), 2, 1); }});
  cases.push_back({"conv2d 1x1", {R({2, 3, 4, 4}), R({2, 3, 1, 1}), R({1, 2, 1, 1})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return conv2d(v[0], v[1], std::optional<Var<double>>(v[2]), 1, 0); }});
  cases.push_back({"maxpool2x", {R({2, 2, 4, 6})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return maxpool2x(v[0]); }});
  cases.push_back({"bilinear upsample", {R({2, 2, 3, 4})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return bilinear_upsample2x(v[0]); }});
  cases.push_back({"batchnorm train", {R({3, 2, 3, 3}), random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5), R({1, 2, 1, 1})},
                   [](Tape<double>&, std::vector<Var<double>>& v) {
                     BatchNormState<double> st(2);
                     return batchnorm(v[0], v[1], v[2], st, Mode::train);
                   }});
  cases.push_back({"batchnorm infer", {R({2, 2, 3, 3}), random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5), R({1, 2, 1, 1})},
                   [](Tape<double>&, std::vector<Var<double>>& v) {
                     BatchNormState<double> st(2);
                     st.running_mean[0] = 0.3;
                     st.running_var[1] = 2.0;
                     st.initialized = true;
                     return batchnorm(v[0], v[1], v[2], st, Mode::infer);
                   }});
  cases.push_back({"relu", {R({2, 3, 4, 4})}, [](Tape<double>&, std::vector<Var<double>>& v) { return relu(v[0]); }});
  cases.push_back({"sigmoid", {R({2, 3, 4, 4})}, [](Tape<double>&, std::vector<Var<double>>& v) { return sigmoid(v[0]); }});
  cases.push_back({"concat", {R({2, 2, 3, 3}), R({2, 3, 3, 3})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return concat_channels(v[0], v[1]); }});
  cases.push_back({"slice", {R({2, 4, 3, 3})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return slice_channels(v[0], 1, 2); }});
  cases.push_back({"residual add", {R({2, 2, 3, 3}), R({2, 2, 3, 3})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return residual_add(v[0], v[1]); }});
  cases.push_back({"mse loss", {R({2, 1, 3, 3}), R({2, 1, 3, 3})},
                   [](Tape<double>&, std::vector<Var<double>>& v) { return mse_loss(v[0], v[1]); }});
  return cases;
}

}  // namespace detail

/// Central-difference check of one op case; the output is reduced with a
/// fixed random weighting.
inline GradCheckResult check_op(detail::OpCase& c, std::uint64_t seed) {
  std::vector<Tensor<double>*> inputs;
  for (auto& t : c.tensors) inputs.push_back(&t);
  std::optional<Tensor<double>> weights;
  return gradcheck(inputs, [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (auto& t : c.tensors) vars.push_back(tape.parameter(t));
    Var<double> y = c.build(tape, vars);
    if (!weights) {
      std::mt19937_64 rng(seed);
      weights = detail::random_tensor(y.shape(), rng);
    }
    return weighted_sum(y, *weights);
  });
}

/// Smallest TriNetwork with a single encoder level (two resolution levels).
inline TriNetworkConfig mini_network_config() {
  TriNetworkConfig cfg;
  cfg.encoder = {2};
  cfg.bottleneck = 4;
  return cfg;
}

/// Finite-difference check of a whole mini TriNetwork in training mode,
/// covering every parameter and the input image.
inline GradCheckResult check_mini_network(std::uint64_t seed) {
  TriNetwork<double> net(mini_network_config());
  he_init(net, seed);
  std::mt19937_64 rng(seed + 1);
  Tensor<double> input = detail::random_tensor({2, 3, 4, 4}, rng);
  Tensor<double> weights = detail::random_tensor({2, 1, 4, 4}, rng);
  std::vector<Tensor<double>*> inputs{&input};
  for (const auto& nt : net.parameters()) inputs.push_back(nt.tensor);
  return gradcheck(inputs, [&](Tape<double>& tape) {
    TriOutput<double> out = net.forward(tape, tape.parameter(input), Mode::train);
    return weighted_sum(out.probability, weights);
  });
}

/// O(P*N) pairwise AUC.
inline double brute_force_auc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  double hits = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) hits += 1.0;
      else if (scores[i] == scores[j]) hits += 0.5;
    }
  }
  return hits / pairs;
}

/// Runs every check. Temporary files go to `scratch` and are removed.
inline SelftestReport run_selftest(const std::filesystem::path& scratch, std::uint64_t seed = 7) {
  SelftestReport report;
  const auto run = [&](const std::string& name, const std::function<std::string(bool&)>& body) {
    SelftestCheck c;
    c.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.detail = body(c.passed);
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("exception: ") + e.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.checks.push_back(std::move(c));
  };
  const auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return std::string(buf);
  };

  std::mt19937_64 rng(seed);
  auto cases = detail::op_cases(rng);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    run("gradient " + cases[i].name, [&](bool& ok) {
      const GradCheckResult r = check_op(cases[i], seed + i);
      ok = r.max_rel_error < 1e-5;
      return "max relative error " + fmt(r.max_rel_error);
    });
  }
  run("gradient mini network", [&](bool& ok) {
    const GradCheckResult r = check_mini_network(seed);
    ok = r.max_rel_error < 1e-5;
    return "max relative error " + fmt(r.max_rel_error) + " over " + std::to_string(r.evaluations) + " evaluations";
  });

  run("auc vs pairwise count", [&](bool& ok) {
    double worst = 0.0;
    std::mt19937_64 r(seed + 100);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + r() % 300;
      std::vector<float> s(n);
      std::vector<std::uint8_t> l(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<float>(r() % 50) / 49.0f;
        l[i] = static_cast<std::uint8_t>(r() % 2);
      }
      l[0] = 0;
      l[1] = 1;
      worst = std::max(worst, std::abs(roc_auc(s, l) - brute_force_auc(s, l)));
    }
    ok = worst <= 1e-12;
    return "max deviation " + fmt(worst);
  });

  run("otsu vs exhaustive search", [&](bool& ok) {
    std::mt19937_64 r(seed + 200);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::uint64_t> hist(kOtsuBins, 0);
      const std::size_t spread = 2 + r() % 255;
      for (int i = 0; i < 500; ++i) ++hist[r() % spread];
      double total = 0.0;
      double sum = 0.0;
      for (std::size_t i = 0; i < hist.size(); ++i) {
        total += static_cast<double>(hist[i]);
        sum += static_cast<double>(hist[i] * i);
      }
      double best = -1.0;
      double n0 = 0.0;
      double s0 = 0.0;
      std::vector<double> var(hist.size(), -1.0);
      for (std::size_t k = 1; k < hist.size(); ++k) {
        n0 += static_cast<double>(hist[k - 1]);
        s0 += static_cast<double>(hist[k - 1] * (k - 1));
        const double n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const double d = (s0 / n0 - (sum - s0) / n1);
        var[k] = n0 * n1 * d * d;
        best = std::max(best, var[k]);
      }
      const std::size_t k = otsu_bin(hist);
      if (var[k] < best * (1.0 - 1e-12)) ++mismatches;
    }
    ok = mismatches == 0;
    return std::to_string(mismatches) + " of 20 histograms off the maximum";
  });

  run("metric arithmetic", [&](bool& ok) {
    ConfusionCounts c;
    c.tp = 81;
    c.fn = 19;
    c.tn = 98;
    c.fp = 2;
    const MetricReport m = metrics(c);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", m.g_mean);
    ok = std::string(buf) == "0.89" && std::abs(m.g_mean * m.g_mean - m.sensitivity * m.specificity) < 1e-12;
    return std::string("g-mean ") + buf;
  });

  run("tiling coverage", [&](bool& ok) {
    std::mt19937_64 r(seed + 300);
    std::uniform_int_distribution<std::size_t> dim(96, 400);
    ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
      const std::size_t h = dim(r);
      const std::size_t w = dim(r);
      const PatchPlan plan = tile_plan(h, w);
      for (std::uint32_t c : coverage(plan, h, w)) ok = ok && c >= 1;
      Tensor<float> patches(Shape{plan.anchors.size(), 1, plan.patch_size, plan.patch_size}, 0.3f);
      const Tensor<float> st = stitch(plan, h, w, patches);
      for (float v : st.data()) ok = ok && v == 0.3f;
    }
    return ok ? "all pixels covered, constant stitch exact" : "coverage or stitch failure";
  });

  run("checkpoint round trip", [&](bool& ok) {
    TriNetwork<float> net(mini_network_config());
    he_init(net, seed);
    std::filesystem::create_directories(scratch);
    const auto path = scratch / "selftest_roundtrip.triv";
    save_checkpoint(net, path);
    LoadedCheckpoint<float> back = load_checkpoint<float>(path);
    std::filesystem::remove(path);
    const auto a = net.tensors();
    const auto b = back.net.tensors();
    ok = a.size() == b.size();
    for (std::size_t i = 0; ok && i < a.size(); ++i) {
      ok = a[i].name == b[i].name && a[i].tensor->shape() == b[i].tensor->shape() &&
           std::memcmp(a[i].tensor->data().data(), b[i].tensor->data().data(), a[i].tensor->size() * sizeof(float)) == 0;
    }
    return std::to_string(a.size()) + " tensors";
  });
  return report;
}

inline std::string format_selftest(const SelftestReport& r) {
  std::ostringstream os;
  for (const auto& c : r.checks) {
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.2fs", c.seconds);
    os << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ", " << secs << ")\n";
  }
  os << (r.passed() ? "selftest passed" : "selftest FAILED") << '\n';
  return os.str();
}

}  // namespace trinet

#endif  // TRINET_SELFTEST_HPP
