#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <boost/multiprecision/cpp_int.hpp>

#include "trinet/evaluation.hpp"

using namespace trinet;
using boost::multiprecision::cpp_rational;

namespace {

// Pairwise statistic: positives outranking negatives, ties counting one half.
double brute_auc(const std::vector<float>& s, const std::vector<std::uint8_t>& l) {
  std::uint64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (l[i] ? pos : neg)++;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

// Textbook between-class variance w0*w1*(mu0-mu1)^2 in exact rationals,
// over every split; first maximum wins.
std::size_t exhaustive_otsu(const std::vector<std::uint64_t>& hist) {
  cpp_rational total = 0;
  for (auto h : hist) total += h;
  std::size_t best = 0;
  cpp_rational best_v = -1;
  for (std::size_t k = 1; k < hist.size(); ++k) {
    cpp_rational n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (std::size_t i = 0; i < hist.size(); ++i) {
      (i < k ? n0 : n1) += hist[i];
      (i < k ? s0 : s1) += cpp_rational(hist[i]) * i;
    }
    if (n0 == 0 || n1 == 0) continue;
    const cpp_rational d = s0 / n0 - s1 / n1;
    const cpp_rational v = (n0 / total) * (n1 / total) * d * d;
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return best;
}

ProbabilityMap make_map(std::vector<float> p, std::size_t h, std::size_t w) {
  ProbabilityMap m{"m", h, w, std::move(p), std::vector<std::uint8_t>(h * w, 1)};
  return m;
}

}  // namespace

TEST(RocAuc, MatchesPairwiseCountOnRandomInstances) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 1999;
    const int levels = t % 3 == 0 ? 7 : 1000000;  // every third instance is tie-heavy
    std::vector<float> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<float>(rng() % levels) / static_cast<float>(levels);
      l[i] = rng() % 3 == 0;
    }
    l[0] = 1;
    l[1] = 0;
    EXPECT_NEAR(roc_auc(s, l), brute_auc(s, l), 1e-12) << "instance " << t;
  }
}

TEST(RocAuc, InvariantUnderMonotoneMapsAndFlipsUnderNegation) {
  std::mt19937_64 rng(3);
  std::vector<float> s(300), e(300), neg(300);
  std::vector<std::uint8_t> l(300);
  for (std::size_t i = 0; i < 300; ++i) {
    s[i] = static_cast<float>(rng() % 10000) / 10000.f;
    e[i] = std::exp(3.f * s[i]);
    neg[i] = -s[i];
    l[i] = (rng() % 2) == 0;
  }
  EXPECT_NEAR(roc_auc(s, l), roc_auc(e, l), 1e-12);
  EXPECT_NEAR(roc_auc(neg, l), 1.0 - roc_auc(s, l), 1e-12);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<float>{0.1f, 0.9f}, std::vector<std::uint8_t>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<float>{0.5f, 0.5f}, std::vector<std::uint8_t>{0, 1}), 0.5);
  EXPECT_THROW(roc_auc(std::vector<float>{0.1f, 0.2f}, std::vector<std::uint8_t>{1, 1}), UndefinedMetricError);
}

TEST(RocAuc, PooledUsesFovPixelsOnly) {
  ProbabilityMap m = make_map({0.9f, 0.1f, 0.0f, 1.0f}, 2, 2);
  m.fov = {1, 1, 0, 0};
  std::vector<std::vector<std::uint8_t>> truth{{1, 0, 1, 0}};
  EXPECT_DOUBLE_EQ(roc_auc(std::span<const ProbabilityMap>(&m, 1), truth), 1.0);
}

TEST(Otsu, MatchesExhaustiveSearchOnRandomMaps) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 10 + rng() % 50, w = 10 + rng() % 50;
    std::vector<float> p(h * w);
    std::normal_distribution<float> lo(0.2f, 0.1f), hi(0.75f, 0.15f);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (auto& v : p) {
      const int kind = static_cast<int>(rng() % 3);
      v = std::clamp(kind == 0 ? lo(rng) : kind == 1 ? hi(rng) : u(rng), 0.f, 1.f);
    }
    const ProbabilityMap m = make_map(p, h, w);
    std::vector<std::uint64_t> hist(256, 0);
    for (float v : p) ++hist[std::min<std::size_t>(255, static_cast<std::size_t>(std::floor(v * 256.0)))];
    EXPECT_EQ(otsu_threshold(m), static_cast<double>(exhaustive_otsu(hist)) / 256.0) << "map " << t;
  }
}

TEST(Otsu, SmallHistogramsAgreeWithExhaustiveSearchIncludingTies) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 500; ++t) {
    std::vector<std::uint64_t> hist(2 + rng() % 9);
    for (auto& h : hist) h = rng() % 4;
    hist[0] += 1;
    hist.back() += 1;
    EXPECT_EQ(otsu_bin(hist), exhaustive_otsu(hist));
  }
  EXPECT_EQ(otsu_bin(std::vector<std::uint64_t>{1, 0, 1}), 1u);
}

TEST(Otsu, SeparatesTwoLevelAndClusteredMaps) {
  std::vector<float> p(100, 0.1f);
  for (std::size_t i = 0; i < 30; ++i) p[i] = 0.8f;
  const double t = otsu_threshold(make_map(p, 10, 10));
  EXPECT_GT(t, 0.1);
  EXPECT_LE(t, 0.8);

  std::mt19937_64 rng(2);
  std::normal_distribution<float> a(0.2f, 0.05f), b(0.8f, 0.05f);
  std::vector<float> q(10000);
  std::vector<std::uint8_t> lab(10000);
  for (std::size_t i = 0; i < q.size(); ++i) {
    lab[i] = i % 4 == 0;
    q[i] = std::clamp(lab[i] ? b(rng) : a(rng), 0.f, 1.f);
  }
  const double tq = otsu_threshold(make_map(q, 100, 100));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < q.size(); ++i) wrong += (q[i] >= tq) != (lab[i] != 0);
  EXPECT_LT(wrong, 100u);
}

TEST(Otsu, ConstantMapIsDegenerate) {
  EXPECT_THROW(otsu_threshold(make_map(std::vector<float>(16, 0.4f), 4, 4)), DegenerateInputError);
}

TEST(Confusion, CountsFovPixelsAtInclusiveThreshold) {
  ProbabilityMap m = make_map({0.5f, 0.49f, 0.7f, 0.2f, 0.9f, 0.9f}, 2, 3);
  m.fov = {1, 1, 1, 1, 1, 0};
  const std::vector<std::uint8_t> truth{1, 1, 0, 0, 1, 0};
  const ConfusionCounts c = confusion(m, 0.5, truth);
  EXPECT_EQ(c, (ConfusionCounts{2, 1, 1, 1}));
  EXPECT_THROW(confusion(m, 0.5, std::vector<std::uint8_t>(5)), ShapeError);
}

TEST(Metrics, FormulasAndPublishedGMeanArithmetic) {
  const MetricReport r = metrics(ConfusionCounts{81, 98, 2, 19});
  EXPECT_DOUBLE_EQ(r.accuracy, 179.0 / 200.0);
  EXPECT_DOUBLE_EQ(r.sensitivity, 0.81);
  EXPECT_DOUBLE_EQ(r.specificity, 0.98);
  EXPECT_NEAR(r.g_mean, std::sqrt(0.81 * 0.98), 1e-15);
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << r.g_mean;
  EXPECT_EQ(os.str(), "0.89");
  EXPECT_NE(format_metrics_table("x", r).find("0.89"), std::string::npos);
}

TEST(Metrics, UndefinedRatiosRaise) {
  EXPECT_THROW(metrics(ConfusionCounts{}), UndefinedMetricError);
  EXPECT_THROW(metrics(ConfusionCounts{0, 5, 1, 0}), UndefinedMetricError);
  EXPECT_THROW(metrics(ConfusionCounts{3, 0, 0, 1}), UndefinedMetricError);
  const MetricReport n = metrics_or_nan(ConfusionCounts{0, 5, 1, 0});
  EXPECT_TRUE(std::isnan(n.sensitivity));
  EXPECT_FALSE(std::isnan(n.specificity));
}

TEST(ScoreMaps, PooledRowSumsImagesAndCsvLayout) {
  std::vector<ProbabilityMap> maps{make_map({0.9f, 0.1f, 0.8f, 0.2f}, 2, 2), make_map({0.7f, 0.3f, 0.05f, 0.95f}, 2, 2)};
  maps[1].id = "n";
  std::vector<std::vector<std::uint8_t>> truth{{1, 0, 1, 0}, {1, 0, 0, 1}};
  const DatasetReport rep = score_maps(maps, truth);
  ConfusionCounts sum;
  for (const auto& im : rep.images) sum += im.counts;
  EXPECT_EQ(sum, rep.pooled_counts);
  EXPECT_DOUBLE_EQ(*rep.pooled.auc, 1.0);
  EXPECT_DOUBLE_EQ(rep.pooled.g_mean, 1.0);
  std::ostringstream os;
  write_metrics_csv(os, rep);
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "id,auc,acc,sens,spec,gmean");
  EXPECT_EQ(lines[3].substr(0, 7), "pooled,");
  EXPECT_THROW(score_maps(std::span<const ProbabilityMap>{}, truth), DataError);
}
