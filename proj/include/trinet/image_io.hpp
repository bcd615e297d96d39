#ifndef TRINET_IMAGE_IO_HPP
#define TRINET_IMAGE_IO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "trinet/errors.hpp"
#include "trinet/gif.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

namespace detail {

inline bool is_gif(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".gif";
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Decoded pixels as interleaved RGB doubles in [0,1].
struct Decoded {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> rgb;
};

inline Decoded decode_any(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing file: " + path.string());
  Decoded d;
  if (is_gif(path)) {
    GifImage g = decode_gif(read_bytes(path));
    d.h = g.height;
    d.w = g.width;
    d.rgb.resize(g.rgb.size());
    for (std::size_t i = 0; i < g.rgb.size(); ++i) d.rgb[i] = g.rgb[i] / 255.0;
    return d;
  }
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot decode image: " + path.string());
  double scale = 0.0;
  if (m.depth() == CV_8U) scale = 1.0 / 255.0;
  else if (m.depth() == CV_16U) scale = 1.0 / 65535.0;
  else throw DataError("unsupported pixel depth in " + path.string());
  const int ch = m.channels();
  if (ch != 1 && ch != 3 && ch != 4) throw DataError("unsupported channel count in " + path.string());
  d.h = static_cast<std::size_t>(m.rows);
  d.w = static_cast<std::size_t>(m.cols);
  d.rgb.resize(3 * d.h * d.w);
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      double px[4] = {0, 0, 0, 0};
      for (int c = 0; c < ch; ++c) {
        px[c] = m.depth() == CV_8U ? m.ptr<std::uint8_t>(y)[x * ch + c] : m.ptr<std::uint16_t>(y)[x * ch + c];
      }
      const std::size_t i = 3 * (static_cast<std::size_t>(y) * d.w + static_cast<std::size_t>(x));
      if (ch == 1) {
        d.rgb[i] = d.rgb[i + 1] = d.rgb[i + 2] = px[0] * scale;
      } else {  // OpenCV stores BGR(A)
        d.rgb[i] = px[2] * scale;
        d.rgb[i + 1] = px[1] * scale;
        d.rgb[i + 2] = px[0] * scale;
      }
    }
  }
  return d;
}

}  // namespace detail

/// Reads an 8- or 16-bit image as (1,3,h,w) RGB in [0,1]. Grayscale input
/// is replicated to three channels.
inline Tensor<float> read_rgb(const std::filesystem::path& path) {
  const detail::Decoded d = detail::decode_any(path);
  Tensor<float> t(Shape{1, 3, d.h, d.w});
  const std::size_t plane = d.h * d.w;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = static_cast<float>(d.rgb[3 * i + c]);
  }
  return t;
}

/// Reads a mask as (1,1,h,w) with 1 wherever any channel is nonzero.
inline Tensor<float> read_mask(const std::filesystem::path& path) {
  const detail::Decoded d = detail::decode_any(path);
  Tensor<float> t(Shape{1, 1, d.h, d.w});
  for (std::size_t i = 0; i < d.h * d.w; ++i) {
    t[i] = (d.rgb[3 * i] > 0.0 || d.rgb[3 * i + 1] > 0.0 || d.rgb[3 * i + 2] > 0.0) ? 1.0f : 0.0f;
  }
  return t;
}

inline void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write image " + path.string());
}

/// 8-bit grayscale PNG.
inline void write_png_gray8(const std::filesystem::path& path, std::span<const std::uint8_t> px, std::size_t h,
                            std::size_t w) {
  if (px.size() != h * w) throw ShapeError("write_png_gray8: pixel count mismatch");
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
  std::copy(px.begin(), px.end(), m.ptr<std::uint8_t>(0));
  write_or_throw(path, m);
}

/// 16-bit grayscale PNG.
inline void write_png_gray16(const std::filesystem::path& path, std::span<const std::uint16_t> px, std::size_t h,
                             std::size_t w) {
  if (px.size() != h * w) throw ShapeError("write_png_gray16: pixel count mismatch");
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_16UC1);
  std::copy(px.begin(), px.end(), m.ptr<std::uint16_t>(0));
  write_or_throw(path, m);
}

/// 8-bit RGB PNG of a (1,3,h,w) image in [0,1].
inline void write_png_rgb(const std::filesystem::path& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("write_png_rgb: expected (1,3,h,w), got " + s.str());
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC3);
  const std::size_t plane = s.plane();
  for (std::size_t y = 0; y < s.h; ++y) {
    auto* row = m.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(image[c * plane + y * s.w + x]), 0.0, 1.0);
        row[3 * x + (2 - c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  write_or_throw(path, m);
}

/// Probability map as 16-bit PNG, value = round(p * 65535).
inline void write_probability_png(const std::filesystem::path& path, std::span<const float> probs, std::size_t h,
                                  std::size_t w) {
  std::vector<std::uint16_t> px(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    px[i] = static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(probs[i]), 0.0, 1.0) * 65535.0));
  }
  write_png_gray16(path, px, h, w);
}

/// Binary mask as 8-bit PNG with values 0/255.
inline void write_mask_png(const std::filesystem::path& path, std::span<const std::uint8_t> mask, std::size_t h,
                           std::size_t w) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask[i] ? 255 : 0;
  write_png_gray8(path, px, h, w);
}

}  // namespace trinet

#endif  // TRINET_IMAGE_IO_HPP
