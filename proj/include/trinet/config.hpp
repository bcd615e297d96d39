#ifndef TRINET_CONFIG_HPP
#define TRINET_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trinet/data.hpp"
#include "trinet/errors.hpp"
#include "trinet/optim.hpp"

namespace trinet {

enum class Precision { f32, f64 };

inline Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

inline const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

/// Everything a command needs. Defaults follow the published setup; the
/// synthetic_* keys only matter when `dataset = synthetic`.
struct RunConfig {
  std::string dataset;
  std::string layout = "drive";
  std::string out = "out";
  std::string checkpoint;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  Precision precision = Precision::f32;

  double lr = 0.0008;
  double lr_decay = 0.94;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::size_t checkpoint_every = 0;

  std::size_t patch_size = kPatchSize;
  std::size_t patches_per_image = kPatchesPerImage;
  std::size_t val_patches_per_image = kValPatchesPerImage;
  std::size_t tile_stride = kTileStride;
  std::size_t width_divisor = 1;
  std::size_t iostar_train = 20;

  double jitter_brightness = 0.2;
  double jitter_contrast = 0.2;
  double jitter_saturation = 0.2;
  double jitter_hue = 0.05;

  std::optional<double> threshold;
  bool per_image_threshold = false;

  std::size_t synthetic_train = 20;
  std::size_t synthetic_test = 10;
  std::size_t synthetic_size = 128;

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "dataset", "layout", "out", "checkpoint", "seed", "threads", "precision",
        "lr", "lr_decay", "epochs", "batch_size", "checkpoint_every",
        "patch_size", "patches_per_image", "val_patches_per_image", "tile_stride", "width_divisor", "iostar_train",
        "jitter_brightness", "jitter_contrast", "jitter_saturation", "jitter_hue",
        "threshold", "per_image_threshold",
        "synthetic_train", "synthetic_test", "synthetic_size"};
    return k;
  }

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  TrainPlan train_plan() const {
    TrainPlan p;
    p.base_lr = lr;
    p.decay = lr_decay;
    p.epochs = epochs;
    p.batch_size = batch_size;
    p.seed = seed;
    p.checkpoint_every = checkpoint_every;
    return p;
  }

  JitterParams jitter() const { return {jitter_brightness, jitter_contrast, jitter_saturation, jitter_hue}; }

  bool synthetic_dataset() const { return dataset == "synthetic"; }

  /// Makes every path absolute (relative to `base`) and checks ranges.
  void resolve(const std::filesystem::path& base = std::filesystem::current_path());

  std::string to_text() const {
    std::ostringstream os;
    for (const std::string& k : keys()) {
      const std::string v = get(k);
      if (!v.empty()) os << k << " = " << v << '\n';
    }
    return os.str();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected true or false)");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_number;
  const auto sz = [&] { return parse_number<std::size_t>(key, value); };
  const auto real = [&] { return parse_number<double>(key, value); };
  if (key == "dataset") dataset = value;
  else if (key == "layout") layout = value;
  else if (key == "out") out = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "threads") threads = sz();
  else if (key == "precision") precision = parse_precision(value);
  else if (key == "lr") lr = real();
  else if (key == "lr_decay") lr_decay = real();
  else if (key == "epochs") epochs = sz();
  else if (key == "batch_size") batch_size = sz();
  else if (key == "checkpoint_every") checkpoint_every = sz();
  else if (key == "patch_size") patch_size = sz();
  else if (key == "patches_per_image") patches_per_image = sz();
  else if (key == "val_patches_per_image") val_patches_per_image = sz();
  else if (key == "tile_stride") tile_stride = sz();
  else if (key == "width_divisor") width_divisor = sz();
  else if (key == "iostar_train") iostar_train = sz();
  else if (key == "jitter_brightness") jitter_brightness = real();
  else if (key == "jitter_contrast") jitter_contrast = real();
  else if (key == "jitter_saturation") jitter_saturation = real();
  else if (key == "jitter_hue") jitter_hue = real();
  else if (key == "threshold") threshold = value.empty() ? std::nullopt : std::optional<double>(real());
  else if (key == "per_image_threshold") per_image_threshold = detail::parse_bool(key, value);
  else if (key == "synthetic_train") synthetic_train = sz();
  else if (key == "synthetic_test") synthetic_test = sz();
  else if (key == "synthetic_size") synthetic_size = sz();
  else throw ConfigError("unknown config key '" + key + "'");
}

inline std::string RunConfig::get(const std::string& key) const {
  using detail::format_double;
  if (key == "dataset") return dataset;
  if (key == "layout") return layout;
  if (key == "out") return out;
  if (key == "checkpoint") return checkpoint;
  if (key == "seed") return std::to_string(seed);
  if (key == "threads") return std::to_string(threads);
  if (key == "precision") return to_string(precision);
  if (key == "lr") return format_double(lr);
  if (key == "lr_decay") return format_double(lr_decay);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "batch_size") return std::to_string(batch_size);
  if (key == "checkpoint_every") return std::to_string(checkpoint_every);
  if (key == "patch_size") return std::to_string(patch_size);
  if (key == "patches_per_image") return std::to_string(patches_per_image);
  if (key == "val_patches_per_image") return std::to_string(val_patches_per_image);
  if (key == "tile_stride") return std::to_string(tile_stride);
  if (key == "width_divisor") return std::to_string(width_divisor);
  if (key == "iostar_train") return std::to_string(iostar_train);
  if (key == "jitter_brightness") return format_double(jitter_brightness);
  if (key == "jitter_contrast") return format_double(jitter_contrast);
  if (key == "jitter_saturation") return format_double(jitter_saturation);
  if (key == "jitter_hue") return format_double(jitter_hue);
  if (key == "threshold") return threshold ? format_double(*threshold) : std::string();
  if (key == "per_image_threshold") return per_image_threshold ? "true" : "false";
  if (key == "synthetic_train") return std::to_string(synthetic_train);
  if (key == "synthetic_test") return std::to_string(synthetic_test);
  if (key == "synthetic_size") return std::to_string(synthetic_size);
  throw ConfigError("unknown config key '" + key + "'");
}

inline void RunConfig::resolve(const std::filesystem::path& base) {
  const auto abs = [&](std::string& p) {
    if (!p.empty()) p = std::filesystem::weakly_canonical(base / p).string();
  };
  if (!synthetic_dataset()) abs(dataset);
  abs(out);
  abs(checkpoint);
  if (layout != "drive" && layout != "iostar" && layout != "synthetic") {
    throw ConfigError("unknown dataset layout '" + layout + "' (expected drive, iostar or synthetic)");
  }
  if (threads == 0) throw ConfigError("threads must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0) || !(lr_decay > 0.0)) throw ConfigError("lr and lr_decay must be positive");
  if (patch_size == 0 || patch_size % 16 != 0) throw ConfigError("patch_size must be a positive multiple of 16");
  if (tile_stride == 0) throw ConfigError("tile_stride must be positive");
  if (val_patches_per_image > patches_per_image) throw ConfigError("val_patches_per_image exceeds patches_per_image");
  if (width_divisor == 0) throw ConfigError("width_divisor must be positive");
  if (threshold && !(*threshold >= 0.0 && *threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  jitter().validate();
}

/// Parses `key = value` lines; `#` starts a comment.
inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin = "config") {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

}  // namespace trinet

#endif  // TRINET_CONFIG_HPP
