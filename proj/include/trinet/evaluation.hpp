#ifndef TRINET_EVALUATION_HPP
#define TRINET_EVALUATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <compare>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "trinet/errors.hpp"

namespace trinet {

/// Full-resolution vessel probabilities with the field-of-view mask.
struct ProbabilityMap {
  std::string id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> probs;
  std::vector<std::uint8_t> fov;

  void validate() const {
    if (probs.size() != height * width || fov.size() != height * width) {
      throw ShapeError("probability map " + id + ": buffers do not match " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }
};

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp, tn += o.tn, fp += o.fp, fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricReport {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double g_mean = 0.0;
  std::optional<double> auc;
};

inline constexpr std::size_t kOtsuBins = 256;

/// Histogram bin of a probability in [0,1] for `bins` equal-width bins.
inline std::size_t probability_bin(double p, std::size_t bins = kOtsuBins) {
  const double scaled = std::floor(std::clamp(p, 0.0, 1.0) * static_cast<double>(bins));
  return std::min(bins - 1, static_cast<std::size_t>(scaled));
}

namespace detail {

/// a * b as a 192-bit value (high 128 bits, low 64 bits).
struct Wide {
  unsigned __int128 hi;
  std::uint64_t lo;
  auto operator<=>(const Wide&) const = default;
};

inline Wide mul_wide(unsigned __int128 a, std::uint64_t b) {
  const auto lo = static_cast<unsigned __int128>(static_cast<std::uint64_t>(a)) * b;
  const auto hi = static_cast<unsigned __int128>(static_cast<std::uint64_t>(a >> 64)) * b;
  return {hi + (lo >> 64), static_cast<std::uint64_t>(lo)};
}

}  // namespace detail

/// Otsu's threshold over a histogram of bin indices. Candidate k splits
/// bins [0,k) from [k,bins); returns the k maximizing the between-class
/// variance (lowest k on ties). The variance is proportional to
/// (N*S0 - N0*S)^2 / (N0*N1) and candidates are compared exactly.
inline std::size_t otsu_bin(std::span<const std::uint64_t> hist) {
  const std::size_t bins = hist.size();
  std::uint64_t n_total = 0;
  std::uint64_t s_total = 0;
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < bins; ++i) {
    n_total += hist[i];
    s_total += hist[i] * i;
    distinct += hist[i] > 0 ? 1 : 0;
  }
  if (distinct < 2) throw DegenerateInputError("otsu: need at least two distinct histogram bins, input is constant");
  if (static_cast<unsigned __int128>(n_total) * n_total * (bins - 1) >> 64) {
    throw DataError("otsu: histogram too large for exact comparison");
  }
  std::uint64_t n0 = 0;
  std::uint64_t s0 = 0;
  std::size_t best = 0;
  unsigned __int128 best_num = 0;
  std::uint64_t best_den = 1;
  for (std::size_t k = 1; k < bins; ++k) {
    n0 += hist[k - 1];
    s0 += hist[k - 1] * (k - 1);
    const std::uint64_t n1 = n_total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const auto a = static_cast<unsigned __int128>(n_total) * s0;
    const auto b = static_cast<unsigned __int128>(n0) * s_total;
    const auto d = static_cast<std::uint64_t>(a > b ? a - b : b - a);
    const unsigned __int128 num = static_cast<unsigned __int128>(d) * d;
    const std::uint64_t den = n0 * n1;
    if (best == 0 || detail::mul_wide(num, best_den) > detail::mul_wide(best_num, den)) {
      best = k;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

/// Adds the FOV pixels of `map` to a histogram.
inline void accumulate_histogram(const ProbabilityMap& map, std::span<std::uint64_t> hist) {
  map.validate();
  for (std::size_t i = 0; i < map.probs.size(); ++i) {
    if (map.fov[i]) ++hist[probability_bin(map.probs[i], hist.size())];
  }
}

/// Otsu threshold over the pooled FOV pixels of `maps`, as a bin boundary in [0,1].
inline double otsu_threshold(std::span<const ProbabilityMap> maps, std::size_t bins = kOtsuBins) {
  if (bins < 2) throw ConfigError("otsu: need at least two bins");
  std::vector<std::uint64_t> hist(bins, 0);
  for (const ProbabilityMap& m : maps) accumulate_histogram(m, hist);
  return static_cast<double>(otsu_bin(hist)) / static_cast<double>(bins);
}

inline double otsu_threshold(const ProbabilityMap& map, std::size_t bins = kOtsuBins) {
  return otsu_threshold(std::span<const ProbabilityMap>(&map, 1), bins);
}

/// Counts FOV pixels only; a pixel is predicted vessel when prob >= threshold.
inline ConfusionCounts confusion(const ProbabilityMap& map, double threshold, std::span<const std::uint8_t> truth) {
  map.validate();
  if (truth.size() != map.probs.size()) {
    throw ShapeError("confusion: truth mask has " + std::to_string(truth.size()) + " pixels, map has " +
                     std::to_string(map.probs.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < map.probs.size(); ++i) {
    if (!map.fov[i]) continue;
    const bool pred = static_cast<double>(map.probs[i]) >= threshold;
    const bool pos = truth[i] != 0;
    if (pred && pos) ++c.tp;
    else if (pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Accuracy, sensitivity, specificity and their geometric mean.
inline MetricReport metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw UndefinedMetricError("accuracy", "accuracy undefined: no pixels counted");
  if (c.tp + c.fn == 0) throw UndefinedMetricError("sensitivity", "sensitivity undefined: TP+FN = 0");
  if (c.tn + c.fp == 0) throw UndefinedMetricError("specificity", "specificity undefined: TN+FP = 0");
  MetricReport r;
  r.accuracy = static_cast<double>(c.tn + c.tp) / static_cast<double>(c.total());
  r.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  r.g_mean = std::sqrt(r.sensitivity * r.specificity);
  return r;
}

/// Rank-based (Mann-Whitney) area under the ROC curve: the fraction of
/// positive/negative pairs with the positive scored higher, ties counting 1/2.
inline double roc_auc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  std::uint64_t pos = 0;
  for (std::uint8_t l : labels) pos += l ? 1 : 0;
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc", "roc_auc: need both positive and negative labels");

  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based ranks of positives, ties sharing their average rank.
  // Ranks are kept doubled so every quantity stays an integer.
  std::uint64_t rank_sum2 = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::uint64_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      pos_in_group += labels[order[j]] ? 1 : 0;
      ++j;
    }
    rank_sum2 += pos_in_group * static_cast<std::uint64_t>(i + 1 + j);
    i = j;
  }
  const double u = (static_cast<double>(rank_sum2) - static_cast<double>(pos) * static_cast<double>(pos + 1)) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Pooled AUC over the FOV pixels of every map.
inline double roc_auc(std::span<const ProbabilityMap> maps, std::span<const std::vector<std::uint8_t>> truths) {
  if (maps.size() != truths.size()) throw ShapeError("roc_auc: one truth mask per map required");
  std::vector<float> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    maps[k].validate();
    if (truths[k].size() != maps[k].probs.size()) throw ShapeError("roc_auc: truth mask size mismatch");
    for (std::size_t i = 0; i < maps[k].probs.size(); ++i) {
      if (!maps[k].fov[i]) continue;
      scores.push_back(maps[k].probs[i]);
      labels.push_back(truths[k][i] ? 1 : 0);
    }
  }
  return roc_auc(scores, labels);
}

/// Per-image row and the pooled summary of a dataset evaluation.
struct ImageMetrics {
  std::string id;
  ConfusionCounts counts;
  MetricReport report;
};

struct DatasetReport {
  double threshold = 0.0;
  ConfusionCounts pooled_counts;
  MetricReport pooled;
  std::vector<ImageMetrics> images;
};

/// Metrics of one counts record; undefined entries become NaN.
inline MetricReport metrics_or_nan(const ConfusionCounts& c) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  MetricReport r{nan, nan, nan, nan, std::nullopt};
  if (c.total() > 0) r.accuracy = static_cast<double>(c.tn + c.tp) / static_cast<double>(c.total());
  if (c.tp + c.fn > 0) r.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.tn + c.fp > 0) r.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (!std::isnan(r.sensitivity) && !std::isnan(r.specificity)) r.g_mean = std::sqrt(r.sensitivity * r.specificity);
  return r;
}

/// Pooled Otsu threshold, pooled confusion and pooled AUC over `maps`.
/// With `per_image_threshold` each image is binarized at its own Otsu
/// threshold instead (the pooled row still sums the per-image counts).
inline DatasetReport score_maps(std::span<const ProbabilityMap> maps, std::span<const std::vector<std::uint8_t>> truths,
                                bool per_image_threshold = false) {
  if (maps.empty()) throw DataError("evaluation: no probability maps");
  if (maps.size() != truths.size()) throw ShapeError("evaluation: one truth mask per map required");
  DatasetReport rep;
  rep.threshold = otsu_threshold(maps);
  for (std::size_t k = 0; k < maps.size(); ++k) {
    double t = rep.threshold;
    if (per_image_threshold) t = otsu_threshold(maps[k]);
    ImageMetrics im;
    im.id = maps[k].id;
    im.counts = confusion(maps[k], t, truths[k]);
    im.report = metrics_or_nan(im.counts);
    try {
      im.report.auc = roc_auc(maps.subspan(k, 1), truths.subspan(k, 1));
    } catch (const UndefinedMetricError&) {
      im.report.auc = std::numeric_limits<double>::quiet_NaN();
    }
    rep.pooled_counts += im.counts;
    rep.images.push_back(std::move(im));
  }
  rep.pooled = metrics(rep.pooled_counts);
  rep.pooled.auc = roc_auc(maps, truths);
  return rep;
}

inline void write_metrics_csv(std::ostream& os, const DatasetReport& rep) {
  os << "id,auc,acc,sens,spec,gmean\n";
  auto row = [&](const std::string& id, const MetricReport& r) {
    os << id << ',' << std::setprecision(17) << r.auc.value_or(std::numeric_limits<double>::quiet_NaN()) << ','
       << r.accuracy << ',' << r.sensitivity << ',' << r.specificity << ',' << r.g_mean << '\n';
  };
  for (const ImageMetrics& im : rep.images) row(im.id, im.report);
  row("pooled", rep.pooled);
}

/// Aligned table in the layout of the published comparison (2 decimals).
inline std::string format_metrics_table(const std::string& label, const MetricReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "Method" << std::right << std::setw(8) << "AUC" << std::setw(10) << "Accuracy"
     << std::setw(13) << "Sensitivity" << std::setw(13) << "Specificity" << std::setw(8) << "G-mean" << '\n';
  os << std::left << std::setw(16) << label << std::right << std::fixed << std::setprecision(2) << std::setw(8)
     << r.auc.value_or(std::numeric_limits<double>::quiet_NaN()) << std::setw(10) << r.accuracy << std::setw(13)
     << r.sensitivity << std::setw(13) << r.specificity << std::setw(8) << r.g_mean << '\n';
  return os.str();
}

}  // namespace trinet

#endif  // TRINET_EVALUATION_HPP
