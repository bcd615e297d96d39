#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>

#include "support.hpp"
#include "trinet/checkpoint.hpp"
#include "trinet/config.hpp"
#include "trinet/dataset.hpp"
#include "trinet/image_io.hpp"
#include "trinet/synthetic.hpp"

using namespace trinet;
namespace fs = std::filesystem;

namespace {

std::uint64_t pattern_index(std::uint64_t y, std::uint64_t x) {
  return (((x * 2654435761ull) ^ (y * 40503ull) ^ (x * y * 97ull)) >> 3) % 256;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void expect_pattern(const GifImage& g, std::size_t h, std::size_t w, std::uint64_t colors) {
  ASSERT_EQ(g.height, h);
  ASSERT_EQ(g.width, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint64_t i = pattern_index(y, x) % colors;
      const std::uint8_t* px = &g.rgb[(y * w + x) * 3];
      ASSERT_EQ(px[0], i) << y << "," << x;
      ASSERT_EQ(px[1], 255 - i);
      ASSERT_EQ(px[2], (i * 37) % 256);
    }
}

}  // namespace

TEST(Gif, DecodesPalettePatternExactly) {
  const fs::path d = testing_support::data_dir() / "gif";
  expect_pattern(decode_gif(file_bytes(d / "pattern_80x60.gif")), 60, 80, 256);
  expect_pattern(decode_gif(file_bytes(d / "pattern_80x60_interlaced.gif")), 60, 80, 256);
  expect_pattern(decode_gif(file_bytes(d / "pattern_5x7_4color.gif")), 7, 5, 4);
}

TEST(Gif, RejectsTruncatedAndForeignData) {
  auto bytes = file_bytes(testing_support::data_dir() / "gif" / "pattern_80x60.gif");
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_gif(bytes), DataError);
  const std::vector<std::uint8_t> junk{'P', 'N', 'G', '!', 0, 0};
  EXPECT_THROW(decode_gif(junk), DataError);
}

TEST(ImageIo, PngRoundTrips) {
  const fs::path dir = testing_support::scratch_dir("png");
  std::vector<float> probs{0.f, 1.f, 0.5f, 0.25f, 1e-6f, 0.999f};
  write_probability_png(dir / "p.png", probs, 2, 3);
  const cv::Mat p = cv::imread((dir / "p.png").string(), cv::IMREAD_UNCHANGED);
  ASSERT_EQ(p.type(), CV_16UC1);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    EXPECT_EQ(p.at<std::uint16_t>(static_cast<int>(i / 3), static_cast<int>(i % 3)),
              static_cast<std::uint16_t>(std::lround(probs[i] * 65535.0)));
  }

  std::vector<std::uint8_t> mask{1, 0, 0, 1, 1, 0};
  write_mask_png(dir / "m.png", mask, 3, 2);
  const Tensor<float> m = read_mask(dir / "m.png");
  EXPECT_EQ(m.shape(), (Shape{1, 1, 3, 2}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(m[i], static_cast<float>(mask[i]));

  Tensor<float> rgb(Shape{1, 3, 4, 5});
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<float>((i * 7) % 256) / 255.f;
  write_png_rgb(dir / "c.png", rgb);
  const Tensor<float> back = read_rgb(dir / "c.png");
  for (std::size_t i = 0; i < rgb.size(); ++i) EXPECT_FLOAT_EQ(back[i], rgb[i]);

  EXPECT_THROW(read_rgb(dir / "absent.png"), DataError);
  std::ofstream(dir / "bad.png") << "not an image";
  EXPECT_THROW(read_rgb(dir / "bad.png"), DataError);
}

TEST(Dataset, LoadsDriveTreeWithTiffAndGifCompanions) {
  const fs::path root = testing_support::data_dir() / "drive_mini";
  const DatasetSplit s = load_dataset(root, Layout::drive);
  ASSERT_EQ(s.train.size(), 1u);
  ASSERT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.train[0].id, "21_training");
  for (const auto& [sample, raw] : {std::pair{&s.train[0], "21_training.rgb"}, std::pair{&s.test[0], "01_test.rgb"}}) {
    ASSERT_EQ(sample->image.shape(), (Shape{1, 3, 100, 112}));
    const auto bytes = file_bytes(testing_support::data_dir() / "raw" / raw);
    ASSERT_EQ(bytes.size(), 100u * 112 * 3);
    for (std::size_t y = 0; y < 100; ++y)
      for (std::size_t x = 0; x < 112; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          ASSERT_FLOAT_EQ(sample->image.at(0, c, y, x), bytes[(y * 112 + x) * 3 + c] / 255.f);
    for (std::size_t y = 0; y < 100; ++y)
      for (std::size_t x = 0; x < 112; ++x) {
        const bool vessel = (y >= 40 && y < 44) || (x >= 60 && x < 63);
        const double dy = y - 49.5, dx = x - 55.5;
        const bool fov = dy * dy + dx * dx <= 46.0 * 46.0;
        ASSERT_EQ(sample->vessel.at(0, 0, y, x), vessel ? 1.f : 0.f) << y << "," << x;
        ASSERT_EQ(sample->fov.at(0, 0, y, x), fov ? 1.f : 0.f) << y << "," << x;
      }
  }
}

TEST(Dataset, IostarLayoutSplitsSortedImages) {
  const fs::path root = testing_support::scratch_dir("iostar");
  auto samples = generate_synthetic_dataset(4, 3, SyntheticOptions{32, 32});
  for (auto& s : samples) {
    const std::string stem = "STAR " + s.id.substr(3) + "_ODC";
    write_png_rgb(root / "image" / (stem + ".png"), s.image);
    std::vector<std::uint8_t> v(s.vessel.size()), f(s.fov.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s.vessel[i] != 0.f, f[i] = s.fov[i] != 0.f;
    write_mask_png(root / "GT" / (stem + "_GT.png"), v, 32, 32);
    write_mask_png(root / "mask" / (stem + "_mask.png"), f, 32, 32);
  }
  const DatasetSplit split = load_dataset(root, Layout::iostar, 3);
  ASSERT_EQ(split.train.size(), 3u);
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.test[0].id, "STAR 04_ODC");
  EXPECT_EQ(split.test[0].vessel.storage(), samples[3].vessel.storage());
  EXPECT_THROW(load_dataset(root, Layout::iostar, 4), DataError);
}

TEST(Dataset, MissingPathsNameTheCulprit) {
  try {
    load_dataset("/nonexistent/trinet", Layout::drive);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/trinet"), std::string::npos);
  }
  const fs::path root = testing_support::scratch_dir("partial");
  write_split(root, "training", generate_synthetic_dataset(1, 1, SyntheticOptions{32, 32}));
  write_split(root, "test", generate_synthetic_dataset(1, 2, SyntheticOptions{32, 32}));
  fs::remove(root / "test" / "mask" / "syn01_mask.png");
  try {
    load_dataset(root, Layout::drive);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("syn01"), std::string::npos);
  }
  EXPECT_THROW(parse_layout("chase"), ConfigError);
}

TEST(Dataset, WrittenSplitsReloadExactly) {
  const fs::path root = testing_support::scratch_dir("split");
  const auto train = generate_synthetic_dataset(2, 4, SyntheticOptions{48, 40});
  write_split(root, "training", train);
  write_split(root, "test", train);
  const DatasetSplit s = load_dataset(root, Layout::synthetic);
  ASSERT_EQ(s.train.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(s.train[i].vessel.storage(), train[i].vessel.storage());
    EXPECT_EQ(s.train[i].fov.storage(), train[i].fov.storage());
    for (std::size_t k = 0; k < train[i].image.size(); ++k) {
      ASSERT_NEAR(s.train[i].image[k], train[i].image[k], 0.5 / 255 + 1e-6);
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = testing_support::scratch_dir("ckpt");
  TriNetwork<float> net(TriNetworkConfig::narrowed(4));
  he_init(net, 5);
  for (const auto& nt : net.tensors())
    if (nt.role == TensorRole::running_stat)
      for (auto& v : nt.tensor->data()) v += 0.123f;
  const auto params = net.parameters();
  AdamState<float> adam(params);
  adam.step = 17;
  adam.m[0].fill(0.5f);
  ChannelStats stats;
  stats.mean = {0.1, 0.2, 0.3};
  save_checkpoint(net, dir / "a.triv", CheckpointExtras<float>{stats, &adam});

  LoadedCheckpoint<float> back = load_checkpoint<float>(dir / "a.triv");
  const auto ta = net.tensors(), tb = back.net.tensors();
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    ASSERT_EQ(ta[i].name, tb[i].name);
    ASSERT_EQ(std::memcmp(ta[i].tensor->data().data(), tb[i].tensor->data().data(), ta[i].tensor->size() * sizeof(float)),
              0)
        << ta[i].name;
  }
  ASSERT_TRUE(back.adam.has_value());
  EXPECT_EQ(back.adam->step, 17u);
  EXPECT_EQ(back.adam->m[0].storage(), adam.m[0].storage());
  ASSERT_TRUE(back.stats.has_value());
  EXPECT_FLOAT_EQ(static_cast<float>(back.stats->mean[2]), 0.3f);

  save_checkpoint(back.net, dir / "b.triv", CheckpointExtras<float>{back.stats, &*back.adam});
  EXPECT_EQ(file_bytes(dir / "a.triv"), file_bytes(dir / "b.triv"));
}

TEST(Checkpoint, ByteLayoutOfASingleTensor) {
  const fs::path dir = testing_support::scratch_dir("layout");
  write_tensor_file<float>(dir / "t.triv", {{"w", Tensor<float>(Shape{1, 1, 1, 2}, {1.5f, -2.f})}});
  const auto b = file_bytes(dir / "t.triv");
  std::vector<std::uint8_t> expect{'T', 'R', 'I', 'V', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 'w'};
  ASSERT_GE(b.size(), expect.size());
  EXPECT_TRUE(std::equal(expect.begin(), expect.end(), b.begin()));
  float tail[2];
  std::memcpy(tail, b.data() + b.size() - 8, 8);
  EXPECT_EQ(tail[0], 1.5f);
  EXPECT_EQ(tail[1], -2.f);
  const auto recs = read_tensor_file<double>(dir / "t.triv");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].tensor[1], -2.0);
}

TEST(Checkpoint, CorruptFilesRaiseLoadError) {
  const fs::path dir = testing_support::scratch_dir("corrupt");
  TriNetwork<float> net(TriNetworkConfig::narrowed(8));
  save_checkpoint(net, dir / "ok.triv");
  const auto bytes = file_bytes(dir / "ok.triv");
  auto write = [&](const std::string& name, const std::vector<std::uint8_t>& b) {
    std::ofstream(dir / name, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    return dir / name;
  };
  EXPECT_THROW(load_checkpoint<float>(write("trunc.triv", {bytes.begin(), bytes.end() - 5})), LoadError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_checkpoint<float>(write("magic.triv", magic)), LoadError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(load_checkpoint<float>(write("extra.triv", extra)), LoadError);
  EXPECT_THROW(load_checkpoint<float>(dir / "absent.triv"), LoadError);

  auto recs = checkpoint_records(net);
  recs.push_back({"stray.tensor", Tensor<float>(Shape{1, 1, 1, 1}, 1.f)});
  write_tensor_file(dir / "unknown.triv", recs);
  EXPECT_THROW(load_checkpoint<float>(dir / "unknown.triv"), LoadError);
  recs.pop_back();
  recs.erase(recs.begin() + 3);
  write_tensor_file(dir / "missing.triv", recs);
  EXPECT_THROW(load_checkpoint<float>(dir / "missing.triv"), LoadError);
}

TEST(Config, ParsesKeyValueTextAndReportsLines) {
  RunConfig cfg;
  apply_config_text(cfg, "# comment\nlr = 0.01\nepochs=3  # trailing\n\nprecision = f64\nthreshold = 0.4\n");
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
  EXPECT_EQ(cfg.epochs, 3u);
  EXPECT_EQ(cfg.precision, Precision::f64);
  EXPECT_EQ(cfg.threshold, 0.4);
  try {
    apply_config_text(cfg, "lr = 1\nbogus = 2\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(apply_config_text(cfg, "epochs = many"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "just words"), ConfigError);
}

TEST(Config, GetSetRoundTripAndValidation) {
  RunConfig a;
  a.lr = 0.00123;
  a.seed = 99;
  a.per_image_threshold = true;
  RunConfig b;
  for (const auto& k : RunConfig::keys()) b.set(k, a.get(k));
  for (const auto& k : RunConfig::keys()) EXPECT_EQ(b.get(k), a.get(k)) << k;

  RunConfig c;
  c.dataset = "synthetic";
  EXPECT_NO_THROW(c.resolve(fs::temp_directory_path()));
  c.patch_size = 40;
  EXPECT_THROW(c.resolve("."), ConfigError);
  c.patch_size = 96;
  c.threshold = 1.5;
  EXPECT_THROW(c.resolve("."), ConfigError);
  EXPECT_THROW(parse_precision("f16"), ConfigError);
}
