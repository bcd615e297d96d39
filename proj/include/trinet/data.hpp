#ifndef TRINET_DATA_HPP
#define TRINET_DATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trinet/errors.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

/// One fundus image with its vessel and field-of-view masks.
/// `image` is (1,3,h,w) in [0,1]; the masks are (1,1,h,w) with values in {0,1}.
struct FundusSample {
  std::string id;
  Tensor<float> image;
  Tensor<float> vessel;
  Tensor<float> fov;

  std::size_t height() const noexcept { return image.shape().h; }
  std::size_t width() const noexcept { return image.shape().w; }

  void validate() const {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3) throw DataError(id + ": image must be (1,3,h,w), got " + s.str());
    if (!(vessel.shape() == Shape{1, 1, s.h, s.w}) || !(fov.shape() == Shape{1, 1, s.h, s.w})) {
      throw DataError(id + ": image " + s.str() + " and masks " + vessel.shape().str() + "/" + fov.shape().str() +
                      " disagree in size");
    }
    for (const Tensor<float>* m : {&vessel, &fov}) {
      for (float v : m->data()) {
        if (v != 0.0f && v != 1.0f) throw DataError(id + ": mask values must be 0 or 1");
      }
    }
  }
};

/// Per-channel means of the training images.
struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
};

inline ChannelStats compute_channel_stats(std::span<const FundusSample> train) {
  if (train.empty()) throw DataError("channel statistics need at least one training image");
  std::array<double, 3> sum{};
  double count = 0.0;
  for (const FundusSample& s : train) {
    const std::size_t plane = s.image.shape().plane();
    for (std::size_t c = 0; c < 3; ++c) {
      const float* p = s.image.data().data() + c * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      sum[c] += acc;
    }
    count += static_cast<double>(plane);
  }
  ChannelStats stats;
  for (std::size_t c = 0; c < 3; ++c) stats.mean[c] = sum[c] / count;
  return stats;
}

/// Subtracts the channel means in place; no variance scaling.
template <typename T>
void normalize_image(Tensor<T>& image, const ChannelStats& stats) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError("normalize: expected 3 channels, got " + s.str());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      T* p = image.data().data() + (n * 3 + c) * s.plane();
      const T m = static_cast<T>(stats.mean[c]);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] -= m;
    }
  }
}

inline FundusSample normalize(FundusSample sample, const ChannelStats& stats) {
  normalize_image(sample.image, stats);
  return sample;
}

/// Jitter magnitudes: brightness, contrast and saturation factors are drawn
/// from [1-s, 1+s]; the hue shift from [-hue, +hue] (fraction of a turn).
struct JitterParams {
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.05;

  static JitterParams none() { return {0.0, 0.0, 0.0, 0.0}; }

  void validate() const {
    for (double s : {brightness, contrast, saturation}) {
      if (!(s >= 0.0 && s < 1.0)) throw ConfigError("jitter strengths must lie in [0, 1)");
    }
    if (!(hue >= 0.0 && hue <= 0.5)) throw ConfigError("jitter hue strength must lie in [0, 0.5]");
  }
};

/// Concrete factors of one jitter draw.
struct JitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue_shift = 0.0;
};

inline JitterFactors draw_jitter(const JitterParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  JitterFactors f;
  f.brightness = 1.0 + params.brightness * unit(rng);
  f.contrast = 1.0 + params.contrast * unit(rng);
  f.saturation = 1.0 + params.saturation * unit(rng);
  f.hue_shift = params.hue * unit(rng);
  return f;
}

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
  if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = (h - std::floor(h)) * 6.0;
  const auto sector = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace detail

/// Applies brightness, contrast, saturation and hue adjustments in that
/// order to a (n,3,h,w) image in [0,1], clamping to [0,1] after each step.
/// Neutral factors leave the image untouched.
template <typename T>
void apply_jitter(Tensor<T>& image, const JitterFactors& f) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError("color jitter: expected 3 channels, got " + s.str());
  const std::size_t plane = s.plane();
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  for (std::size_t n = 0; n < s.n; ++n) {
    T* r = image.data().data() + n * 3 * plane;
    T* g = r + plane;
    T* b = g + plane;
    if (f.brightness != 1.0) {
      for (std::size_t i = 0; i < 3 * plane; ++i) r[i] = static_cast<T>(clamp01(r[i] * f.brightness));
    }
    if (f.contrast != 1.0) {
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += detail::luma(r[i], g[i], b[i]);
      mean /= static_cast<double>(plane);
      for (std::size_t i = 0; i < 3 * plane; ++i) {
        r[i] = static_cast<T>(clamp01((r[i] - mean) * f.contrast + mean));
      }
    }
    if (f.saturation != 1.0) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double gray = detail::luma(r[i], g[i], b[i]);
        r[i] = static_cast<T>(clamp01((r[i] - gray) * f.saturation + gray));
        g[i] = static_cast<T>(clamp01((g[i] - gray) * f.saturation + gray));
        b[i] = static_cast<T>(clamp01((b[i] - gray) * f.saturation + gray));
      }
    }
    if (f.hue_shift != 0.0) {
      for (std::size_t i = 0; i < plane; ++i) {
        double h = 0.0, sat = 0.0, v = 0.0, rr = 0.0, gg = 0.0, bb = 0.0;
        detail::rgb_to_hsv(r[i], g[i], b[i], h, sat, v);
        detail::hsv_to_rgb(h + f.hue_shift, sat, v, rr, gg, bb);
        r[i] = static_cast<T>(clamp01(rr));
        g[i] = static_cast<T>(clamp01(gg));
        b[i] = static_cast<T>(clamp01(bb));
      }
    }
  }
}

/// Seeded random color jitter of a sample's image; masks are untouched.
inline FundusSample color_jitter(FundusSample sample, std::uint64_t seed, const JitterParams& params = {}) {
  apply_jitter(sample.image, draw_jitter(params, seed));
  return sample;
}

struct PatchAnchor {
  std::size_t sample = 0;
  std::size_t y = 0;
  std::size_t x = 0;
  bool operator==(const PatchAnchor&) const = default;
};

enum class PatchPurpose { train, tile };

/// Where patches are cut from: training crops or an inference tiling.
struct PatchPlan {
  std::size_t patch_size = 96;
  std::vector<PatchAnchor> anchors;
  PatchPurpose purpose = PatchPurpose::train;
};

struct TrainValPlans {
  PatchPlan train;
  PatchPlan val;
};

inline constexpr std::size_t kPatchSize = 96;
inline constexpr std::size_t kPatchesPerImage = 4000;
inline constexpr std::size_t kValPatchesPerImage = 400;
inline constexpr std::size_t kTileStride = 30;

/// Draws `per_image` uniformly placed crops from every sample; the first
/// `val_per_image` of each image's draws go to validation.
inline TrainValPlans sample_training_patches(std::span<const FundusSample> samples, std::uint64_t seed,
                                             std::size_t per_image = kPatchesPerImage,
                                             std::size_t val_per_image = kValPatchesPerImage,
                                             std::size_t patch = kPatchSize) {
  if (val_per_image > per_image) throw ConfigError("validation patches exceed patches per image");
  TrainValPlans plans;
  plans.train.patch_size = plans.val.patch_size = patch;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t h = samples[i].height();
    const std::size_t w = samples[i].width();
    if (h < patch || w < patch) {
      throw DataError(samples[i].id + ": image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is smaller than the " + std::to_string(patch) + " px patch");
    }
    std::uniform_int_distribution<std::size_t> ys(0, h - patch);
    std::uniform_int_distribution<std::size_t> xs(0, w - patch);
    for (std::size_t k = 0; k < per_image; ++k) {
      const std::size_t y = ys(rng);
      const std::size_t x = xs(rng);
      (k < val_per_image ? plans.val : plans.train).anchors.push_back({i, y, x});
    }
  }
  return plans;
}

/// Axis anchors 0, stride, 2*stride, ... plus a final dim-patch anchor when
/// the regular grid stops short of the border.
inline std::vector<std::size_t> tile_axis(std::size_t dim, std::size_t patch, std::size_t stride) {
  if (dim < patch) throw ShapeError("tiling: dimension " + std::to_string(dim) + " < patch " + std::to_string(patch));
  if (stride == 0) throw ConfigError("tiling stride must be positive");
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a + patch <= dim; a += stride) out.push_back(a);
  if (out.back() + patch < dim) out.push_back(dim - patch);
  return out;
}

inline PatchPlan tile_plan(std::size_t h, std::size_t w, std::size_t stride = kTileStride,
                           std::size_t patch = kPatchSize) {
  PatchPlan plan;
  plan.patch_size = patch;
  plan.purpose = PatchPurpose::tile;
  const auto ys = tile_axis(h, patch, stride);
  const auto xs = tile_axis(w, patch, stride);
  for (std::size_t y : ys) {
    for (std::size_t x : xs) plan.anchors.push_back({0, y, x});
  }
  return plan;
}

/// Per-pixel mean of overlapping patch predictions. `patches` is
/// (N,c,p,p) with N = plan.anchors.size(); the result is (1,c,h,w).
/// Accumulation is in double, so averaging k copies of a value is exact.
template <typename T>
Tensor<float> stitch(const PatchPlan& plan, std::size_t h, std::size_t w, const Tensor<T>& patches) {
  const Shape s = patches.shape();
  const std::size_t p = plan.patch_size;
  if (s.n != plan.anchors.size() || s.h != p || s.w != p) {
    throw ShapeError("stitch: expected " + std::to_string(plan.anchors.size()) + " patches of " + std::to_string(p) +
                     " px, got " + s.str());
  }
  std::vector<double> acc(s.c * h * w, 0.0);
  std::vector<std::uint32_t> count(h * w, 0);
  for (std::size_t i = 0; i < plan.anchors.size(); ++i) {
    const PatchAnchor& a = plan.anchors[i];
    if (a.y + p > h || a.x + p > w) throw ShapeError("stitch: anchor outside the image");
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) acc[(c * h + a.y + y) * w + a.x + x] += patches.at(i, c, y, x);
      }
    }
    for (std::size_t y = 0; y < p; ++y) {
      for (std::size_t x = 0; x < p; ++x) ++count[(a.y + y) * w + a.x + x];
    }
  }
  Tensor<float> out(Shape{1, s.c, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    if (count[i] == 0) throw ShapeError("stitch: plan leaves pixels uncovered");
    for (std::size_t c = 0; c < s.c; ++c) {
      out[c * h * w + i] = static_cast<float>(acc[c * h * w + i] / count[i]);
    }
  }
  return out;
}

/// Number of patches covering each pixel.
inline std::vector<std::uint32_t> coverage(const PatchPlan& plan, std::size_t h, std::size_t w) {
  std::vector<std::uint32_t> count(h * w, 0);
  for (const PatchAnchor& a : plan.anchors) {
    for (std::size_t y = a.y; y < std::min(h, a.y + plan.patch_size); ++y) {
      for (std::size_t x = a.x; x < std::min(w, a.x + plan.patch_size); ++x) ++count[y * w + x];
    }
  }
  return count;
}

/// Copies the (c,p,p) window at (y,x) of a (1,c,h,w) tensor into slot
/// `slot` of a (N,c,p,p) tensor.
template <typename T, typename S>
void extract_patch(const Tensor<S>& src, std::size_t y, std::size_t x, Tensor<T>& dst, std::size_t slot) {
  const Shape ss = src.shape();
  const Shape ds = dst.shape();
  if (ss.c != ds.c || y + ds.h > ss.h || x + ds.w > ss.w || slot >= ds.n) {
    throw ShapeError("extract_patch: window does not fit " + ss.str() + " -> " + ds.str());
  }
  for (std::size_t c = 0; c < ss.c; ++c) {
    for (std::size_t r = 0; r < ds.h; ++r) {
      const S* in = src.data().data() + (c * ss.h + y + r) * ss.w + x;
      T* out = dst.data().data() + ((slot * ds.c + c) * ds.h + r) * ds.w;
      for (std::size_t q = 0; q < ds.w; ++q) out[q] = static_cast<T>(in[q]);
    }
  }
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Patch images and vessel targets of a mini-batch.
template <typename T>
struct Batch {
  Tensor<T> images;
  Tensor<T> targets;
};

/// Cuts the patches `indices` of `plan` out of `samples`, applies color
/// jitter (when `jitter` is set, seeded per patch from `jitter_seed`) and
/// subtracts the channel means.
template <typename T>
Batch<T> assemble_batch(std::span<const FundusSample> samples, const PatchPlan& plan,
                        std::span<const std::size_t> indices, const ChannelStats& stats,
                        const JitterParams* jitter = nullptr, std::uint64_t jitter_seed = 0) {
  const std::size_t p = plan.patch_size;
  Batch<T> batch{Tensor<T>(Shape{indices.size(), 3, p, p}), Tensor<T>(Shape{indices.size(), 1, p, p})};
  Tensor<T> one(Shape{1, 3, p, p});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const PatchAnchor& a = plan.anchors.at(indices[k]);
    const FundusSample& s = samples[a.sample];
    extract_patch(s.vessel, a.y, a.x, batch.targets, k);
    extract_patch(s.image, a.y, a.x, one, 0);
    if (jitter) apply_jitter(one, draw_jitter(*jitter, mix_seed(jitter_seed, indices[k])));
    normalize_image(one, stats);
    std::copy(one.data().begin(), one.data().end(), batch.images.data().begin() + k * 3 * p * p);
  }
  return batch;
}

}  // namespace trinet

#endif  // TRINET_DATA_HPP
