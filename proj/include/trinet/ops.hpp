#ifndef TRINET_OPS_HPP
#define TRINET_OPS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trinet/errors.hpp"
#include "trinet/tape.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

enum class Mode { train, infer };

namespace hooks {
/// Test-only switch that breaks the ReLU backward rule so gradient checks
/// can be shown to fail. Never set outside negative-control tests.
inline bool& corrupt_relu_gradient() {
  static bool flag = false;
  return flag;
}
}  // namespace hooks

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

/// Unfolds one (C,H,W) image into a (C*k*k, Ho*Wo) row-major matrix.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          T* out = row + oy * wo;
          if (iy < 0 || iy >= ih) {
            std::fill(out, out + wo, T(0));
            continue;
          }
          const T* src = plane + iy * iw;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            out[ox] = (ix >= 0 && ix < iw) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back into the image gradient.
template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* img) {
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= ih) continue;
          const T* in = row + oy * wo;
          T* dst = plane + iy * iw;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < iw) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

/// Source taps for one output index of a 2x half-pixel bilinear resize.
struct UpsampleTap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

inline std::vector<UpsampleTap> upsample_taps(std::size_t in_dim) {
  std::vector<UpsampleTap> taps(2 * in_dim);
  const double last = static_cast<double>(in_dim - 1);
  for (std::size_t j = 0; j < taps.size(); ++j) {
    const double src = std::clamp((static_cast<double>(j) + 0.5) / 2.0 - 0.5, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[j] = {lo, std::min(lo + 1, in_dim - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// 2-D convolution with zero padding. `weight` is (outC, inC, k, k) and
/// `bias`, when given, is (1, outC, 1, 1). Supports k in {1,3}, stride in
/// {1,2}, padding = k/2, giving an output of ceil(h/stride) x ceil(w/stride).
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, std::optional<Var<T>> bias, std::size_t stride,
              std::size_t padding) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  const std::size_t k = ws.h;
  if (ws.h != ws.w || (k != 1 && k != 3)) throw ConfigError("conv2d: kernel size must be 1 or 3");
  if (stride != 1 && stride != 2) throw ConfigError("conv2d: stride must be 1 or 2");
  if (padding != k / 2) throw ConfigError("conv2d: padding must equal floor(k/2)");
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: weight expects " + std::to_string(ws.c) + " input channels, got " +
                     std::to_string(xs.c));
  }
  if (bias && !(bias->shape() == Shape{1, ws.n, 1, 1})) {
    throw ShapeError("conv2d: bias must have shape (1," + std::to_string(ws.n) + ",1,1)");
  }
  const std::size_t ho = (xs.h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (xs.w + 2 * padding - k) / stride + 1;
  const std::size_t out_c = ws.n;
  const std::size_t kk = xs.c * k * k;
  const std::size_t positions = ho * wo;
  const bool direct = (k == 1 && stride == 1);

  Tensor<T> out(Shape{xs.n, out_c, ho, wo});
  {
    const Tensor<T>& x = input.value();
    const Tensor<T>& wt = weight.value();
    Buffer<T> col(direct ? 0 : kk * positions);
    detail::ConstMatMap<T> wmat(wt.data().data(), out_c, kk);
    for (std::size_t b = 0; b < xs.n; ++b) {
      const T* img = x.data().data() + b * xs.c * xs.plane();
      if (!direct) detail::im2col(img, xs.c, xs.h, xs.w, k, stride, padding, ho, wo, col.data());
      detail::ConstMatMap<T> cmat(direct ? img : col.data(), kk, positions);
      detail::MatMap<T> omat(out.data().data() + b * out_c * positions, out_c, positions);
      omat.noalias() = wmat * cmat;
      if (bias) {
        const Tensor<T>& bv = bias->value();
        for (std::size_t o = 0; o < out_c; ++o) omat.row(o).array() += bv[o];
      }
    }
  }

  const std::size_t xid = input.id;
  const std::size_t wid = weight.id;
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  auto backward = [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& x = tape.value(xid);
    const Tensor<T>& wt = tape.value(wid);
    const T* dy_all = tape.grad_buffer(self).data();
    const bool need_x = tape.requires_grad(xid);
    const bool need_w = tape.requires_grad(wid);
    const bool need_b = bid && tape.requires_grad(*bid);
    T* dx_all = need_x ? tape.grad_buffer(xid).data() : nullptr;
    Buffer<T> col(direct || !need_w ? 0 : kk * positions);
    Buffer<T> dcol(direct || !need_x ? 0 : kk * positions);
    detail::ConstMatMap<T> wmat(wt.data().data(), out_c, kk);
    std::optional<detail::MatMap<T>> dw;
    if (need_w) dw.emplace(tape.grad_buffer(wid).data(), out_c, kk);
    for (std::size_t b = 0; b < xs.n; ++b) {
      detail::ConstMatMap<T> dy(dy_all + b * out_c * positions, out_c, positions);
      if (need_b) {
        std::span<T> db = tape.grad_buffer(*bid);
        for (std::size_t o = 0; o < out_c; ++o) db[o] += dy.row(o).sum();
      }
      const T* img = x.data().data() + b * xs.c * xs.plane();
      if (need_w) {
        if (!direct) detail::im2col(img, xs.c, xs.h, xs.w, k, stride, padding, ho, wo, col.data());
        detail::ConstMatMap<T> cmat(direct ? img : col.data(), kk, positions);
        dw->noalias() += dy * cmat.transpose();
      }
      if (need_x) {
        T* dimg = dx_all + b * xs.c * xs.plane();
        if (direct) {
          detail::MatMap<T> dxm(dimg, kk, positions);
          dxm.noalias() += wmat.transpose() * dy;
        } else {
          detail::MatMap<T> dcm(dcol.data(), kk, positions);
          dcm.noalias() = wmat.transpose() * dy;
          detail::col2im(dcol.data(), xs.c, xs.h, xs.w, k, stride, padding, ho, wo, dimg);
        }
      }
    }
  };
  if (bias) return input.tape->record(std::move(out), {xid, wid, *bid}, backward);
  return input.tape->record(std::move(out), {xid, wid}, backward);
}

/// 2x2 max pooling with stride 2. Gradient goes to the first maximal
/// element of each window in scan order.
template <typename T>
Var<T> maxpool2x(Var<T> input) {
  const Shape s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("maxpool2x: odd spatial size " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  std::vector<std::uint32_t> argmax(os.numel());
  const Tensor<T>& x = input.value();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t base = nc * s.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox, ++o) {
        const std::size_t i0 = base + (2 * oy) * s.w + 2 * ox;
        const std::array<std::size_t, 4> window{i0, i0 + 1, i0 + s.w, i0 + s.w + 1};
        std::size_t best = window[0];
        for (std::size_t i : window) {
          if (x[i] > x[best]) best = i;
        }
        out[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  const std::size_t xid = input.id;
  return input.tape->record(std::move(out), {xid}, [xid, argmax = std::move(argmax)](Tape<T>& tape, std::size_t self) {
    std::span<const T> dy = tape.grad_buffer(self);
    std::span<T> dx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
  });
}

/// Doubles height and width by bilinear interpolation with half-pixel
/// centres and edge clamping.
template <typename T>
Var<T> bilinear_upsample2x(Var<T> input) {
  const Shape s = input.shape();
  if (s.h < 1 || s.w < 1) throw ShapeError("bilinear_upsample2x: empty input " + s.str());
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  const auto ty = detail::upsample_taps(s.h);
  const auto tx = detail::upsample_taps(s.w);
  Tensor<T> out(os);
  const Tensor<T>& x = input.value();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = x.data().data() + nc * s.plane();
    T* dst = out.data().data() + nc * os.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      const auto& a = ty[oy];
      const T fy = static_cast<T>(a.frac);
      const T* r0 = src + a.lo * s.w;
      const T* r1 = src + a.hi * s.w;
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        const auto& b = tx[ox];
        const T fx = static_cast<T>(b.frac);
        const T top = r0[b.lo] + fx * (r0[b.hi] - r0[b.lo]);
        const T bot = r1[b.lo] + fx * (r1[b.hi] - r1[b.lo]);
        dst[oy * os.w + ox] = top + fy * (bot - top);
      }
    }
  }
  const std::size_t xid = input.id;
  return input.tape->record(std::move(out), {xid}, [=](Tape<T>& tape, std::size_t self) {
    std::span<const T> dy = tape.grad_buffer(self);
    std::span<T> dx = tape.grad_buffer(xid);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const T* g = dy.data() + nc * os.plane();
      T* d = dx.data() + nc * s.plane();
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        const auto& a = ty[oy];
        const T fy = static_cast<T>(a.frac);
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const auto& b = tx[ox];
          const T fx = static_cast<T>(b.frac);
          const T v = g[oy * os.w + ox];
          d[a.lo * s.w + b.lo] += v * (T(1) - fy) * (T(1) - fx);
          d[a.lo * s.w + b.hi] += v * (T(1) - fy) * fx;
          d[a.hi * s.w + b.lo] += v * fy * (T(1) - fx);
          d[a.hi * s.w + b.hi] += v * fy * fx;
        }
      }
    }
  });
}

/// Per-channel running statistics of a batch-norm layer, shape (1,c,1,1).
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{1, channels, 1, 1}), running_var(Shape{1, channels, 1, 1}, T(1)) {}

  void reset() {
    running_mean.fill(T(0));
    running_var.fill(T(1));
    initialized = true;
  }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Batch normalization over (n,h,w) per channel. Train mode uses batch
/// statistics and blends them into `state` with weight `momentum`; infer
/// mode uses the running statistics.
template <typename T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode,
                 double eps = kBatchNormEps, double momentum = kBatchNormMomentum) {
  const Shape s = input.shape();
  const Shape ps{1, s.c, 1, 1};
  if (!(gamma.shape() == ps) || !(beta.shape() == ps)) {
    throw ShapeError("batchnorm: gamma/beta must have shape " + ps.str());
  }
  if (!(state.running_mean.shape() == ps) || !(state.running_var.shape() == ps)) {
    throw ShapeError("batchnorm: running statistics must have shape " + ps.str());
  }
  const std::size_t count = s.n * s.plane();
  if (mode == Mode::train && count < 2) throw ShapeError("batchnorm: train mode needs n*h*w >= 2");
  if (mode == Mode::infer && !state.initialized) {
    throw StateError("batchnorm: running statistics are uninitialized");
  }

  const Tensor<T>& x = input.value();
  const Tensor<T>& g = gamma.value();
  const Tensor<T>& bt = beta.value();
  std::vector<T> mean(s.c);
  std::vector<T> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < s.n; ++b) {
        const T* p = x.data().data() + (b * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < s.n; ++b) {
        const T* p = x.data().data() + (b * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      state.running_mean[c] = static_cast<T>((1.0 - momentum) * state.running_mean[c] + momentum * mu);
      state.running_var[c] = static_cast<T>((1.0 - momentum) * state.running_var[c] + momentum * var);
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + eps));
    }
  }
  if (mode == Mode::train) state.initialized = true;

  Tensor<T> out(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t off = (b * s.c + c) * s.plane();
      const T scale = g[c] * inv_std[c];
      const T shift = bt[c] - mean[c] * scale;
      for (std::size_t i = 0; i < s.plane(); ++i) out[off + i] = x[off + i] * scale + shift;
    }
  }

  const std::size_t xid = input.id;
  const std::size_t gid = gamma.id;
  const std::size_t bid = beta.id;
  const bool batch_stats = mode == Mode::train;
  return input.tape->record(
      std::move(out), {xid, gid, bid},
      [=, mean = std::move(mean), inv_std = std::move(inv_std)](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& xv = tape.value(xid);
        const Tensor<T>& gv = tape.value(gid);
        std::span<const T> dy = tape.grad_buffer(self);
        const bool need_x = tape.requires_grad(xid);
        const bool need_g = tape.requires_grad(gid);
        const bool need_b = tape.requires_grad(bid);
        for (std::size_t c = 0; c < s.c; ++c) {
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < s.n; ++b) {
            const std::size_t off = (b * s.c + c) * s.plane();
            for (std::size_t i = 0; i < s.plane(); ++i) {
              const double xhat = (xv[off + i] - mean[c]) * inv_std[c];
              sum_dy += dy[off + i];
              sum_dy_xhat += dy[off + i] * xhat;
            }
          }
          if (need_g) tape.grad_buffer(gid)[c] += static_cast<T>(sum_dy_xhat);
          if (need_b) tape.grad_buffer(bid)[c] += static_cast<T>(sum_dy);
          if (!need_x) continue;
          std::span<T> dx = tape.grad_buffer(xid);
          const T scale = gv[c] * inv_std[c];
          if (batch_stats) {
            const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(count));
            for (std::size_t b = 0; b < s.n; ++b) {
              const std::size_t off = (b * s.c + c) * s.plane();
              for (std::size_t i = 0; i < s.plane(); ++i) {
                const T xhat = (xv[off + i] - mean[c]) * inv_std[c];
                dx[off + i] += scale * (dy[off + i] - mean_dy - xhat * mean_dy_xhat);
              }
            }
          } else {
            for (std::size_t b = 0; b < s.n; ++b) {
              const std::size_t off = (b * s.c + c) * s.plane();
              for (std::size_t i = 0; i < s.plane(); ++i) dx[off + i] += scale * dy[off + i];
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> input) {
  Tensor<T> out = input.value();
  for (T& v : out.data()) v = v < T(0) ? T(0) : v;  // NaN passes through
  const std::size_t xid = input.id;
  return input.tape->record(std::move(out), {xid}, [xid](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& x = tape.value(xid);
    std::span<const T> dy = tape.grad_buffer(self);
    std::span<T> dx = tape.grad_buffer(xid);
    const T pass = hooks::corrupt_relu_gradient() ? T(0.5) : T(1);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (x[i] > T(0)) dx[i] += pass * dy[i];
    }
  });
}

/// Logistic function, clamped so the result stays strictly inside (0,1)
/// even where T rounds 1/(1+e^-x) to an endpoint.
template <typename T>
Var<T> sigmoid(Var<T> input) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  Tensor<T> out = input.value();
  for (T& v : out.data()) {
    const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    v = std::clamp(s, lo, hi);
  }
  const std::size_t xid = input.id;
  return input.tape->record(std::move(out), {xid}, [xid](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& y = tape.value(self);
    std::span<const T> dy = tape.grad_buffer(self);
    std::span<T> dx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  });
}

/// Channel concatenation; `a`'s channels come first.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: spatial mismatch " + sa.str() + " vs " + sb.str());
  }
  const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
  Tensor<T> out(os);
  const std::size_t na = sa.c * sa.plane();
  const std::size_t nb = sb.c * sb.plane();
  for (std::size_t i = 0; i < sa.n; ++i) {
    std::copy_n(a.value().data().data() + i * na, na, out.data().data() + i * (na + nb));
    std::copy_n(b.value().data().data() + i * nb, nb, out.data().data() + i * (na + nb) + na);
  }
  const std::size_t aid = a.id;
  const std::size_t bid = b.id;
  return a.tape->record(std::move(out), {aid, bid}, [=](Tape<T>& tape, std::size_t self) {
    std::span<const T> dy = tape.grad_buffer(self);
    for (std::size_t i = 0; i < sa.n; ++i) {
      const T* src = dy.data() + i * (na + nb);
      if (tape.requires_grad(aid)) {
        T* da = tape.grad_buffer(aid).data() + i * na;
        for (std::size_t j = 0; j < na; ++j) da[j] += src[j];
      }
      if (tape.requires_grad(bid)) {
        T* db = tape.grad_buffer(bid).data() + i * nb;
        for (std::size_t j = 0; j < nb; ++j) db[j] += src[na + j];
      }
    }
  });
}

/// Channels [begin, begin+count) of `input`.
template <typename T>
Var<T> slice_channels(Var<T> input, std::size_t begin, std::size_t count) {
  const Shape s = input.shape();
  if (begin + count > s.c) throw ShapeError("slice_channels: range exceeds " + s.str());
  const Shape os{s.n, count, s.h, s.w};
  Tensor<T> out(os);
  const std::size_t chunk = count * s.plane();
  for (std::size_t i = 0; i < s.n; ++i) {
    std::copy_n(input.value().data().data() + (i * s.c + begin) * s.plane(), chunk,
                out.data().data() + i * chunk);
  }
  const std::size_t xid = input.id;
  return input.tape->record(std::move(out), {xid}, [=](Tape<T>& tape, std::size_t self) {
    std::span<const T> dy = tape.grad_buffer(self);
    std::span<T> dx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < s.n; ++i) {
      T* d = dx.data() + (i * s.c + begin) * s.plane();
      for (std::size_t j = 0; j < chunk; ++j) d[j] += dy[i * chunk + j];
    }
  });
}

/// Elementwise a + b for identically shaped tensors.
template <typename T>
Var<T> residual_add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a.shape(), b.shape(), "residual_add");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t aid = a.id;
  const std::size_t bid = b.id;
  return a.tape->record(std::move(out), {aid, bid}, [aid, bid](Tape<T>& tape, std::size_t self) {
    std::span<const T> dy = tape.grad_buffer(self);
    for (std::size_t id : {aid, bid}) {
      if (!tape.requires_grad(id)) continue;
      std::span<T> d = tape.grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

/// Mean squared error, reduced to a (1,1,1,1) scalar.
template <typename T>
Var<T> mse_loss(Var<T> prediction, Var<T> target) {
  detail::require_same_shape(prediction.shape(), target.shape(), "mse_loss");
  const Tensor<T>& p = prediction.value();
  const Tensor<T>& t = target.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  const double count = static_cast<double>(p.size());
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc / count));
  const std::size_t pid = prediction.id;
  const std::size_t tid = target.id;
  return prediction.tape->record(std::move(out), {pid, tid}, [=](Tape<T>& tape, std::size_t self) {
    const T g = tape.grad_buffer(self)[0] * static_cast<T>(2.0 / count);
    const Tensor<T>& pv = tape.value(pid);
    const Tensor<T>& tv = tape.value(tid);
    if (tape.requires_grad(pid)) {
      std::span<T> dp = tape.grad_buffer(pid);
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g * (pv[i] - tv[i]);
    }
    if (tape.requires_grad(tid)) {
      std::span<T> dt = tape.grad_buffer(tid);
      for (std::size_t i = 0; i < dt.size(); ++i) dt[i] -= g * (pv[i] - tv[i]);
    }
  });
}

/// Sum of all elements.
template <typename T>
Var<T> sum(Var<T> input) {
  double acc = 0.0;
  for (T v : input.value().data()) acc += v;
  const std::size_t xid = input.id;
  return input.tape->record(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(acc)), {xid},
                            [xid](Tape<T>& tape, std::size_t self) {
                              const T g = tape.grad_buffer(self)[0];
                              for (T& d : tape.grad_buffer(xid)) d += g;
                            });
}

/// Sum of input * weights; a scalar probe with non-uniform sensitivities.
template <typename T>
Var<T> weighted_sum(Var<T> input, const Tensor<T>& weights) {
  detail::require_same_shape(input.shape(), weights.shape(), "weighted_sum");
  double acc = 0.0;
  const Tensor<T>& x = input.value();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * weights[i];
  const std::size_t xid = input.id;
  return input.tape->record(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(acc)), {xid},
                            [xid, weights](Tape<T>& tape, std::size_t self) {
                              const T g = tape.grad_buffer(self)[0];
                              std::span<T> dx = tape.grad_buffer(xid);
                              for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
                            });
}

}  // namespace trinet

#endif  // TRINET_OPS_HPP
