#ifndef TRINET_GIF_HPP
#define TRINET_GIF_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trinet/errors.hpp"

namespace trinet {

/// First frame of a GIF, expanded to 8-bit RGB.
struct GifImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;
};

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8() {
    if (pos_ >= bytes_.size()) throw DataError("gif: unexpected end of file");
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (u8() << 8));
  }
  void skip(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("gif: unexpected end of file");
    pos_ += n;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("gif: unexpected end of file");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_sub_blocks(ByteReader& in) {
  std::vector<std::uint8_t> out;
  for (std::uint8_t n = in.u8(); n != 0; n = in.u8()) {
    auto chunk = in.take(n);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

/// Variable-width LZW decoder (LSB-first codes, max 12 bits).
inline std::vector<std::uint8_t> lzw_decode(std::span<const std::uint8_t> data, int min_code_size, std::size_t expected) {
  if (min_code_size < 2 || min_code_size > 8) throw DataError("gif: invalid LZW code size");
  const int clear = 1 << min_code_size;
  const int end = clear + 1;
  std::array<std::uint16_t, 4096> prefix{};
  std::array<std::uint8_t, 4096> suffix{};
  std::array<std::uint8_t, 4096> first{};
  for (int i = 0; i < clear; ++i) {
    suffix[i] = static_cast<std::uint8_t>(i);
    first[i] = static_cast<std::uint8_t>(i);
  }
  std::vector<std::uint8_t> out;
  out.reserve(expected);
  std::vector<std::uint8_t> stack;
  int size = min_code_size + 1;
  int next = end + 1;
  int prev = -1;
  std::uint32_t bits = 0;
  int nbits = 0;
  std::size_t pos = 0;

  auto emit = [&](int code) {
    stack.clear();
    while (code >= clear) {
      stack.push_back(suffix[code]);
      code = prefix[code];
    }
    stack.push_back(static_cast<std::uint8_t>(code));
    out.insert(out.end(), stack.rbegin(), stack.rend());
  };

  while (out.size() < expected) {
    while (nbits < size) {
      if (pos >= data.size()) return out;
      bits |= static_cast<std::uint32_t>(data[pos++]) << nbits;
      nbits += 8;
    }
    const int code = static_cast<int>(bits & ((1u << size) - 1));
    bits >>= size;
    nbits -= size;
    if (code == clear) {
      size = min_code_size + 1;
      next = end + 1;
      prev = -1;
      continue;
    }
    if (code == end) break;
    if (prev < 0) {
      if (code >= clear) throw DataError("gif: corrupt LZW stream");
      emit(code);
      prev = code;
      continue;
    }
    std::uint8_t head;
    if (code < next) {
      head = first[code];
      emit(code);
    } else if (code == next) {
      head = first[prev];
      emit(prev);
      out.push_back(head);
    } else {
      throw DataError("gif: corrupt LZW stream");
    }
    if (next < 4096) {
      prefix[next] = static_cast<std::uint16_t>(prev);
      suffix[next] = head;
      first[next] = first[prev];
      ++next;
      if (next == (1 << size) && size < 12) ++size;
    }
    prev = code;
  }
  return out;
}

}  // namespace detail

/// Decodes the first frame of a GIF87a/GIF89a file.
inline GifImage decode_gif(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  const auto sig = in.take(6);
  const std::string magic(sig.begin(), sig.end());
  if (magic != "GIF87a" && magic != "GIF89a") throw DataError("not a GIF file");
  GifImage img;
  img.width = in.u16();
  img.height = in.u16();
  const std::uint8_t flags = in.u8();
  const std::uint8_t background = in.u8();
  in.skip(1);
  std::vector<std::uint8_t> global;
  if (flags & 0x80) {
    auto t = in.take(3 * (std::size_t{1} << ((flags & 7) + 1)));
    global.assign(t.begin(), t.end());
  }
  if (img.width == 0 || img.height == 0) throw DataError("gif: empty canvas");
  std::vector<std::uint8_t> canvas(img.width * img.height, background);
  std::vector<std::uint8_t> palette = global;

  for (;;) {
    const std::uint8_t tag = in.u8();
    if (tag == 0x21) {
      in.skip(1);
      detail::read_sub_blocks(in);
    } else if (tag == 0x2C) {
      const std::size_t left = in.u16();
      const std::size_t top = in.u16();
      const std::size_t w = in.u16();
      const std::size_t h = in.u16();
      const std::uint8_t iflags = in.u8();
      if (iflags & 0x80) {
        auto t = in.take(3 * (std::size_t{1} << ((iflags & 7) + 1)));
        palette.assign(t.begin(), t.end());
      }
      const int min_code = in.u8();
      const auto data = detail::read_sub_blocks(in);
      const auto idx = detail::lzw_decode(data, min_code, w * h);
      if (idx.size() < w * h) throw DataError("gif: image data truncated");
      std::vector<std::size_t> rows;
      if (iflags & 0x40) {
        for (auto [start, step] : {std::pair{0, 8}, std::pair{4, 8}, std::pair{2, 4}, std::pair{1, 2}}) {
          for (std::size_t r = start; r < h; r += step) rows.push_back(r);
        }
      } else {
        for (std::size_t r = 0; r < h; ++r) rows.push_back(r);
      }
      for (std::size_t k = 0; k < h; ++k) {
        const std::size_t y = top + rows[k];
        if (y >= img.height) continue;
        for (std::size_t x = 0; x < w && left + x < img.width; ++x) canvas[y * img.width + left + x] = idx[k * w + x];
      }
      break;
    } else if (tag == 0x3B) {
      throw DataError("gif: no image frame");
    } else {
      throw DataError("gif: unknown block");
    }
  }
  if (palette.empty()) throw DataError("gif: no color table");
  img.rgb.resize(3 * canvas.size());
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const std::size_t c = std::min<std::size_t>(canvas[i], palette.size() / 3 - 1);
    for (std::size_t k = 0; k < 3; ++k) img.rgb[3 * i + k] = palette[3 * c + k];
  }
  return img;
}

}  // namespace trinet

#endif  // TRINET_GIF_HPP
