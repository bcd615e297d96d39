#ifndef TRINET_SYNTHETIC_HPP
#define TRINET_SYNTHETIC_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "trinet/data.hpp"

namespace trinet {

/// Knobs of the synthetic fundus generator.
struct SyntheticOptions {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t min_vessels = 6;
  std::size_t max_vessels = 10;
  double min_width = 1.0;
  double max_width = 5.0;
  double min_contrast = 0.25;
  double max_contrast = 0.45;
  double noise = 0.02;
};

/// A bright textured disc on black, crossed by smooth dark curves of width
/// 1-5 px. Vessel pixels are those within half a width of a curve and
/// inside the circular field of view.
inline FundusSample generate_synthetic_sample(std::uint64_t seed, const std::string& id,
                                              const SyntheticOptions& opt = {}) {
  const std::size_t h = opt.height;
  const std::size_t w = opt.width;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  FundusSample s;
  s.id = id;
  s.image = Tensor<float>(Shape{1, 3, h, w});
  s.vessel = Tensor<float>(Shape{1, 1, h, w});
  s.fov = Tensor<float>(Shape{1, 1, h, w});

  const double cy = (static_cast<double>(h) - 1.0) / 2.0 + uniform(-0.02, 0.02) * h;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0 + uniform(-0.02, 0.02) * w;
  const double radius = 0.47 * static_cast<double>(std::min(h, w));

  // Low-frequency texture: a few random plane waves.
  struct Wave {
    double ky, kx, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 6; ++i) {
    const double freq = uniform(1.0, 4.0) * 2.0 * std::numbers::pi / static_cast<double>(std::min(h, w));
    const double dir = uniform(0.0, 2.0 * std::numbers::pi);
    waves.push_back({freq * std::sin(dir), freq * std::cos(dir), uniform(0.0, 2.0 * std::numbers::pi), uniform(0.02, 0.05)});
  }
  const std::array<double, 3> base{uniform(0.70, 0.85), uniform(0.35, 0.50), uniform(0.15, 0.25)};
  const double disc_r = 0.09 * radius * 2.0;
  const double disc_angle = uniform(0.0, 2.0 * std::numbers::pi);
  const double disc_y = cy + 0.45 * radius * std::sin(disc_angle);
  const double disc_x = cx + 0.45 * radius * std::cos(disc_angle);

  // Per-pixel darkening from vessels (max over curves) and vessel mask.
  std::vector<double> dark(h * w, 0.0);
  const std::size_t n_vessels = std::uniform_int_distribution<std::size_t>(opt.min_vessels, opt.max_vessels)(rng);
  for (std::size_t v = 0; v < n_vessels; ++v) {
    const double width = uniform(opt.min_width, opt.max_width);
    const double contrast = uniform(opt.min_contrast, opt.max_contrast);
    const double half = width / 2.0;
    // Start near the optic disc half of the time, elsewhere in the FOV otherwise.
    double py, px;
    if (u01(rng) < 0.5) {
      py = disc_y + uniform(-disc_r, disc_r);
      px = disc_x + uniform(-disc_r, disc_r);
    } else {
      const double a = uniform(0.0, 2.0 * std::numbers::pi);
      const double r = radius * std::sqrt(u01(rng)) * 0.9;
      py = cy + r * std::sin(a);
      px = cx + r * std::cos(a);
    }
    double theta = uniform(0.0, 2.0 * std::numbers::pi);
    double curvature = 0.0;
    const double length = uniform(0.5, 1.4) * radius;
    const double step = 0.5;
    for (double travelled = 0.0; travelled < length; travelled += step) {
      curvature = 0.9 * curvature + 0.02 * gauss(rng);
      theta += curvature;
      py += step * std::sin(theta);
      px += step * std::cos(theta);
      const double reach = half + 1.0;
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(py - reach));
      const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(py + reach));
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(px - reach));
      const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(px + reach));
      for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, y0); y <= std::min<std::ptrdiff_t>(h - 1, y1); ++y) {
        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, x0); x <= std::min<std::ptrdiff_t>(w - 1, x1); ++x) {
          const double d = std::hypot(static_cast<double>(y) - py, static_cast<double>(x) - px);
          const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
          if (d <= std::max(half, 0.5)) s.vessel[i] = 1.0f;
          // Soft profile: full contrast inside, linear fall-off over half a pixel.
          const double edge = std::clamp(half + 0.5 - d, 0.0, 1.0);
          dark[i] = std::max(dark[i], contrast * std::min(1.0, edge));
        }
      }
    }
  }

  const std::size_t plane = h * w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double rr = (dy * dy + dx * dx) / (radius * radius);
      const bool inside = rr <= 1.0;
      s.fov[i] = inside ? 1.0f : 0.0f;
      if (!inside) {
        s.vessel[i] = 0.0f;
        for (std::size_t c = 0; c < 3; ++c) {
          s.image[c * plane + i] = static_cast<float>(std::clamp(0.02 + 0.01 * gauss(rng), 0.0, 1.0));
        }
        continue;
      }
      double tex = 0.0;
      for (const Wave& wv : waves) tex += wv.amp * std::sin(wv.ky * y + wv.kx * x + wv.phase);
      const double illum = 1.0 - 0.35 * rr;
      const double dd = std::hypot(static_cast<double>(y) - disc_y, static_cast<double>(x) - disc_x) / disc_r;
      const double disc = 0.35 * std::exp(-dd * dd);
      for (std::size_t c = 0; c < 3; ++c) {
        const double channel_dark = dark[i] * (c == 1 ? 1.0 : (c == 0 ? 0.6 : 0.8));
        double v = (base[c] * illum + tex + disc) * (1.0 - channel_dark) + opt.noise * gauss(rng);
        s.image[c * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

/// `count` synthetic samples; sample k uses seed mix_seed(seed, k) and id
/// "<prefix><k+1>" zero-padded to two digits.
inline std::vector<FundusSample> generate_synthetic_dataset(std::size_t count, std::uint64_t seed,
                                                            const SyntheticOptions& opt = {},
                                                            const std::string& prefix = "syn") {
  std::vector<FundusSample> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::string num = std::to_string(k + 1);
    if (num.size() < 2) num = "0" + num;
    out.push_back(generate_synthetic_sample(mix_seed(seed, k), prefix + num, opt));
  }
  return out;
}

}  // namespace trinet

#endif  // TRINET_SYNTHETIC_HPP
