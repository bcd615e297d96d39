#ifndef TRINET_DATASET_HPP
#define TRINET_DATASET_HPP

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trinet/data.hpp"
#include "trinet/errors.hpp"
#include "trinet/image_io.hpp"

namespace trinet {

enum class Layout { drive, iostar, synthetic };

inline Layout parse_layout(std::string_view s) {
  if (s == "drive") return Layout::drive;
  if (s == "iostar") return Layout::iostar;
  if (s == "synthetic") return Layout::synthetic;
  throw ConfigError("unknown dataset layout '" + std::string(s) + "' (expected drive, iostar or synthetic)");
}

struct DatasetSplit {
  std::vector<FundusSample> train;
  std::vector<FundusSample> test;
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const char* e : {".png", ".tif", ".tiff", ".jpg", ".jpeg", ".gif", ".bmp", ".ppm", ".pgm"}) {
    if (ext == e) return true;
  }
  return false;
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("missing dataset directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string leading_digits(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(0, i);
}

/// Companion file of `image` in `candidates`: the first whose stem starts
/// with the image stem, else the first sharing the image's leading number.
inline std::filesystem::path find_companion(const std::filesystem::path& image,
                                            const std::vector<std::filesystem::path>& candidates,
                                            const std::filesystem::path& dir) {
  const std::string stem = image.stem().string();
  for (const auto& c : candidates) {
    if (c.stem().string().rfind(stem, 0) == 0) return c;
  }
  const std::string num = leading_digits(stem);
  if (!num.empty()) {
    for (const auto& c : candidates) {
      const std::string cs = c.stem().string();
      if (leading_digits(cs) == num) return c;
    }
  }
  throw DataError("no file matching '" + stem + "' in " + dir.string());
}

inline FundusSample load_sample(const std::filesystem::path& image, const std::filesystem::path& vessel,
                                const std::filesystem::path& fov) {
  FundusSample s;
  s.id = image.stem().string();
  s.image = read_rgb(image);
  s.vessel = read_mask(vessel);
  s.fov = read_mask(fov);
  s.validate();
  return s;
}

inline std::vector<FundusSample> load_triplets(const std::filesystem::path& images_dir,
                                               const std::filesystem::path& vessel_dir,
                                               const std::filesystem::path& fov_dir) {
  const auto images = list_images(images_dir);
  if (images.empty()) throw DataError("no images in " + images_dir.string());
  const auto vessels = list_images(vessel_dir);
  const auto fovs = list_images(fov_dir);
  std::vector<FundusSample> out;
  for (const auto& img : images) {
    out.push_back(load_sample(img, find_companion(img, vessels, vessel_dir), find_companion(img, fovs, fov_dir)));
  }
  return out;
}

}  // namespace detail

/// Loads a dataset directory.
///  - drive / synthetic: `training/{images,1st_manual,mask}` and `test/...`
///  - iostar: `{image,GT,mask}`; the first `iostar_train` images (sorted by
///    name) form the training split, the rest the test split.
inline DatasetSplit load_dataset(const std::filesystem::path& root, Layout layout, std::size_t iostar_train = 20) {
  if (!std::filesystem::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());
  DatasetSplit split;
  if (layout == Layout::iostar) {
    auto all = detail::load_triplets(root / "image", root / "GT", root / "mask");
    if (all.size() <= iostar_train) {
      throw DataError("IOSTAR layout needs more than " + std::to_string(iostar_train) + " images, found " +
                      std::to_string(all.size()) + " in " + root.string());
    }
    split.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + iostar_train));
    split.test.assign(std::make_move_iterator(all.begin() + iostar_train), std::make_move_iterator(all.end()));
    return split;
  }
  split.train = detail::load_triplets(root / "training" / "images", root / "training" / "1st_manual",
                                      root / "training" / "mask");
  split.test = detail::load_triplets(root / "test" / "images", root / "test" / "1st_manual", root / "test" / "mask");
  return split;
}

/// Writes samples in the DRIVE-style layout used for synthetic data:
/// `<split>/images/<id>.png`, `<split>/1st_manual/<id>_manual1.png`,
/// `<split>/mask/<id>_mask.png`.
inline void write_split(const std::filesystem::path& root, const std::string& split,
                        const std::vector<FundusSample>& samples) {
  const auto base = root / split;
  for (const FundusSample& s : samples) {
    write_png_rgb(base / "images" / (s.id + ".png"), s.image);
    const auto vessel = [&] {
      std::vector<std::uint8_t> m(s.vessel.size());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = s.vessel[i] != 0.0f;
      return m;
    }();
    std::vector<std::uint8_t> fov(s.fov.size());
    for (std::size_t i = 0; i < fov.size(); ++i) fov[i] = s.fov[i] != 0.0f;
    write_mask_png(base / "1st_manual" / (s.id + "_manual1.png"), vessel, s.height(), s.width());
    write_mask_png(base / "mask" / (s.id + "_mask.png"), fov, s.height(), s.width());
  }
}

}  // namespace trinet

#endif  // TRINET_DATASET_HPP
