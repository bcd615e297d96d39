#ifndef TRINET_CLI_HPP
#define TRINET_CLI_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trinet/checkpoint.hpp"
#include "trinet/config.hpp"
#include "trinet/data.hpp"
#include "trinet/dataset.hpp"
#include "trinet/errors.hpp"
#include "trinet/evaluation.hpp"
#include "trinet/image_io.hpp"
#include "trinet/inference.hpp"
#include "trinet/network.hpp"
#include "trinet/selftest.hpp"
#include "trinet/synthetic.hpp"
#include "trinet/trainer.hpp"

namespace trinet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

/// Command-line state shared by every subcommand.
struct Invocation {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<std::string> images;
  std::string fov;
  bool oracle = false;
  bool inject_fault = false;
};

inline std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

inline RunConfig effective_config(const Invocation& inv) {
  RunConfig cfg;
  if (!inv.config_file.empty()) load_config_file(cfg, inv.config_file);
  for (const auto& [k, v] : inv.overrides) cfg.set(k, v);
  cfg.resolve();
  return cfg;
}

inline void echo_config(const RunConfig& cfg, const std::string& command) {
  std::filesystem::create_directories(cfg.out);
  std::ofstream os(std::filesystem::path(cfg.out) / (command + "_config.txt"));
  os << "# effective configuration of `" << command << "`\n" << cfg.to_text();
}

inline SyntheticOptions synthetic_options(const RunConfig& cfg) {
  SyntheticOptions opt;
  opt.height = opt.width = cfg.synthetic_size;
  return opt;
}

/// Train/test split named by the configuration. The synthetic split is
/// generated in memory from the seed.
inline DatasetSplit load_split(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given (use --dataset PATH or --dataset synthetic)");
  if (cfg.synthetic_dataset()) {
    DatasetSplit s;
    s.train = generate_synthetic_dataset(cfg.synthetic_train, mix_seed(cfg.seed, 1), synthetic_options(cfg), "syn");
    s.test = generate_synthetic_dataset(cfg.synthetic_test, mix_seed(cfg.seed, 2), synthetic_options(cfg), "test");
    return s;
  }
  return load_dataset(cfg.dataset, parse_layout(cfg.layout), cfg.iostar_train);
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

template <typename T>
int cmd_train(const RunConfig& cfg, Streams io) {
  const DatasetSplit split = load_split(cfg);
  if (split.train.empty()) throw DataError("training split is empty");
  echo_config(cfg, "train");
  const std::filesystem::path out = cfg.out;
  const ChannelStats stats = compute_channel_stats(split.train);

  std::optional<LoadedCheckpoint<T>> init;
  if (!cfg.checkpoint.empty()) init.emplace(load_checkpoint<T>(cfg.checkpoint));
  TriNetwork<T> net = init ? std::move(init->net) : TriNetwork<T>(TriNetworkConfig::narrowed(cfg.width_divisor));
  if (!init) he_init(net, cfg.seed);

  const TrainValPlans plans = sample_training_patches(split.train, cfg.seed, cfg.patches_per_image,
                                                      cfg.val_patches_per_image, cfg.patch_size);
  const JitterParams jitter = cfg.jitter();
  const PatchSource train_src{split.train, plans.train, stats, &jitter};
  const PatchSource val_src{split.train, plans.val, stats, nullptr};
  io.out << "train: " << split.train.size() << " images, " << train_src.size() << " training / " << val_src.size()
         << " validation patches of " << cfg.patch_size << " px, " << count_parameters(net).total << " parameters\n";

  Trainer<T> trainer(net, cfg.train_plan());
  if (init && init->adam) trainer.adam() = std::move(*init->adam);
  const auto save = [&](const std::filesystem::path& p) {
    save_checkpoint(net, p, CheckpointExtras<T>{stats, &trainer.adam()});
  };
  auto t0 = std::chrono::steady_clock::now();
  typename Trainer<T>::Callbacks cb;
  cb.on_epoch = [&](const EpochRecord& r) {
    const auto t1 = std::chrono::steady_clock::now();
    io.out << "epoch " << r.epoch + 1 << "/" << cfg.epochs << " lr " << r.lr << " train_loss " << fixed(r.train_loss, 6)
           << " val_loss " << fixed(r.val_loss, 6) << " (" << fixed(std::chrono::duration<double>(t1 - t0).count(), 1)
           << "s)\n";
    t0 = t1;
    if (cfg.checkpoint_every > 0 && (r.epoch + 1) % cfg.checkpoint_every == 0) save(out / "latest.triv");
  };
  cb.on_best = [&](TriNetwork<T>&, const EpochRecord&) { save(out / "best.triv"); };
  const TrainHistory history = trainer.train(train_src, val_src, cb);
  save(out / "final.triv");
  std::ofstream h(out / "history.csv");
  history.write_csv(h);
  io.out << "best epoch " << history.best_epoch + 1 << " val_loss " << fixed(history.best_val_loss, 6) << "\nwrote "
         << (out / "best.triv").string() << ", " << (out / "final.triv").string() << ", "
         << (out / "history.csv").string() << '\n';
  return kOk;
}

template <typename T>
LoadedCheckpoint<T> require_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!std::filesystem::exists(cfg.checkpoint)) throw LoadError("checkpoint not found: " + cfg.checkpoint);
  LoadedCheckpoint<T> ck = load_checkpoint<T>(cfg.checkpoint);
  if (!ck.stats) throw LoadError("checkpoint " + cfg.checkpoint + " carries no channel means");
  return ck;
}

inline InferenceOptions inference_options(const RunConfig& cfg) {
  InferenceOptions o;
  o.patch = cfg.patch_size;
  o.stride = cfg.tile_stride;
  return o;
}

inline Tensor<float> fov_for(const Invocation& inv, std::size_t h, std::size_t w) {
  if (inv.fov.empty()) return Tensor<float>(Shape{1, 1, h, w}, 1.0f);
  Tensor<float> fov = read_mask(inv.fov);
  if (fov.shape().h != h || fov.shape().w != w) throw DataError("FOV mask " + inv.fov + " does not match the image size");
  return fov;
}

inline std::vector<std::uint8_t> binarize(const ProbabilityMap& m, double threshold) {
  std::vector<std::uint8_t> mask(m.probs.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = m.fov[i] && m.probs[i] >= threshold ? 1 : 0;
  return mask;
}

template <typename T>
int cmd_predict(const RunConfig& cfg, const Invocation& inv, Streams io) {
  if (inv.images.empty()) throw ConfigError("predict needs at least one image path");
  LoadedCheckpoint<T> ck = require_checkpoint<T>(cfg);
  echo_config(cfg, "predict");
  const std::filesystem::path out = cfg.out;
  for (const std::string& path : inv.images) {
    const Tensor<float> image = read_rgb(path);
    const std::size_t h = image.shape().h;
    const std::size_t w = image.shape().w;
    const PredictedMaps pm = predict_maps(ck.net, image, *ck.stats, inference_options(cfg));
    const std::string stem = std::filesystem::path(path).stem().string();
    const ProbabilityMap map = make_probability_map(stem, pm.probability, fov_for(inv, h, w));
    const double t = cfg.threshold ? *cfg.threshold : otsu_threshold(map);
    write_probability_png(out / (stem + "_prob.png"), map.probs, h, w);
    write_mask_png(out / (stem + "_mask.png"), binarize(map, t), h, w);
    io.out << stem << ": threshold " << fixed(t, 6) << (cfg.threshold ? " (fixed)" : " (otsu)") << ", wrote "
           << (out / (stem + "_prob.png")).string() << ", " << (out / (stem + "_mask.png")).string() << '\n';
  }
  return kOk;
}

inline void write_report(const RunConfig& cfg, const std::string& label, const EvaluationResult& res, Streams io) {
  const std::filesystem::path out = cfg.out;
  std::ofstream csv(out / "metrics.csv");
  write_metrics_csv(csv, res.report);
  const std::string table = format_metrics_table(label, res.report.pooled);
  std::ofstream(out / "metrics.txt") << table;
  for (std::size_t k = 0; k < res.maps.size(); ++k) {
    const ProbabilityMap& m = res.maps[k];
    const double t = cfg.per_image_threshold ? otsu_threshold(m) : res.report.threshold;
    write_probability_png(out / "maps" / (m.id + "_prob.png"), m.probs, m.height, m.width);
    write_mask_png(out / "maps" / (m.id + "_mask.png"), binarize(m, t), m.height, m.width);
  }
  io.out << table << "pooled threshold " << fixed(res.report.threshold, 6) << "\nwrote "
         << (out / "metrics.csv").string() << ", " << (out / "metrics.txt").string() << '\n';
}

template <typename T>
int cmd_evaluate(const RunConfig& cfg, const Invocation& inv, Streams io) {
  const DatasetSplit split = load_split(cfg);
  if (split.test.empty()) throw DataError("test split is empty");
  if (inv.oracle) {
    echo_config(cfg, "evaluate");
    write_report(cfg, "Ground truth", evaluate_oracle(split.test), io);
    return kOk;
  }
  LoadedCheckpoint<T> ck = require_checkpoint<T>(cfg);
  echo_config(cfg, "evaluate");
  EvaluationOptions opt;
  opt.inference = inference_options(cfg);
  opt.per_image_threshold = cfg.per_image_threshold;
  opt.threads = cfg.threads;
  const EvaluationResult res = evaluate_dataset(ck.net, split.test, *ck.stats, opt);
  write_report(cfg, "TriNetwork", res, io);
  return kOk;
}

template <typename T>
int cmd_inspect(const RunConfig& cfg, const Invocation& inv, Streams io) {
  if (inv.images.size() != 1) throw ConfigError("inspect needs exactly one image path");
  LoadedCheckpoint<T> ck = require_checkpoint<T>(cfg);
  echo_config(cfg, "inspect");
  const std::filesystem::path out = cfg.out;
  const Tensor<float> image = read_rgb(inv.images[0]);
  const std::size_t h = image.shape().h;
  const std::size_t w = image.shape().w;
  const PredictedMaps pm = predict_maps(ck.net, image, *ck.stats, inference_options(cfg));
  const std::string stem = std::filesystem::path(inv.images[0]).stem().string();
  std::ofstream bounds(out / (stem + "_branch_bounds.txt"));
  bounds << "branch,min,max\n" << std::setprecision(9);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto v = pm.branches[b].data();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double span = static_cast<double>(*hi) - static_cast<double>(*lo);
    std::vector<std::uint8_t> px(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      px[i] = span > 0.0 ? static_cast<std::uint8_t>(std::lround((v[i] - *lo) / span * 255.0)) : 0;
    }
    const std::string name = "branch_" + std::string(to_string(kAllFilterKinds[b]));
    write_png_gray8(out / (stem + "_" + name + ".png"), px, h, w);
    bounds << to_string(kAllFilterKinds[b]) << ',' << *lo << ',' << *hi << '\n';
  }
  write_probability_png(out / (stem + "_prob.png"), pm.probability.data(), h, w);
  io.out << stem << ": wrote 3 branch activation maps, the probability map and " << stem << "_branch_bounds.txt to "
         << out.string() << '\n';
  return kOk;
}

inline int cmd_synth(const RunConfig& cfg, Streams io) {
  const std::filesystem::path out = cfg.out;
  echo_config(cfg, "synth");
  const SyntheticOptions opt = synthetic_options(cfg);
  write_split(out, "training", generate_synthetic_dataset(cfg.synthetic_train, mix_seed(cfg.seed, 1), opt, "syn"));
  write_split(out, "test", generate_synthetic_dataset(cfg.synthetic_test, mix_seed(cfg.seed, 2), opt, "test"));
  io.out << "wrote " << cfg.synthetic_train << " training and " << cfg.synthetic_test << " test images to "
         << out.string() << '\n';
  return kOk;
}

inline int cmd_selftest(const RunConfig& cfg, const Invocation& inv, Streams io) {
  hooks::corrupt_relu_gradient() = inv.inject_fault;
  SelftestReport r;
  try {
    r = run_selftest(cfg.out, cfg.seed);
  } catch (...) {
    hooks::corrupt_relu_gradient() = false;
    throw;
  }
  hooks::corrupt_relu_gradient() = false;
  io.out << format_selftest(r);
  return r.passed() ? kOk : kNumerical;
}

/// Parses `args` (without the program name) and runs the command.
inline int run(const std::vector<std::string>& args, Streams io = {std::cout, std::cerr}) {
  CLI::App app("Three-branch U-net retinal vessel segmentation", "trinet");
  app.require_subcommand(1);
  Invocation inv;
  std::vector<std::string> keys = RunConfig::keys();
  std::vector<std::string> values(keys.size());
  std::vector<std::string> sets;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config_file, "key = value configuration file");
    for (std::size_t i = 0; i < keys.size(); ++i) sub->add_option(flag_name(keys[i]), values[i]);
    sub->add_option("--set", sets, "extra key=value override");
  };
  CLI::App* train = app.add_subcommand("train", "train a network");
  CLI::App* predict = app.add_subcommand("predict", "probability map and binary mask of images");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score the test split");
  CLI::App* inspect = app.add_subcommand("inspect", "branch activation maps of one image");
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset");
  CLI::App* selftest = app.add_subcommand("selftest", "gradient checks and metric oracles");
  for (CLI::App* s : {train, predict, evaluate, inspect, synth, selftest}) common(s);
  predict->add_option("images", inv.images, "input images")->required();
  predict->add_option("--fov", inv.fov, "field-of-view mask for the Otsu threshold");
  inspect->add_option("image", inv.images, "input image")->required();
  evaluate->add_flag("--oracle-self-test", inv.oracle, "score the ground-truth masks themselves");
  selftest->add_flag("--inject-gradient-fault", inv.inject_fault)->group("");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      for (CLI::App* s : app.get_subcommands()) {
        if (s->count(flag_name(keys[i])) > 0) inv.overrides.emplace_back(keys[i], values[i]);
      }
    }
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      inv.overrides.emplace_back(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    const RunConfig cfg = effective_config(inv);
    const bool f64 = cfg.precision == Precision::f64;
    if (train->parsed()) return f64 ? cmd_train<double>(cfg, io) : cmd_train<float>(cfg, io);
    if (predict->parsed()) return f64 ? cmd_predict<double>(cfg, inv, io) : cmd_predict<float>(cfg, inv, io);
    if (evaluate->parsed()) return f64 ? cmd_evaluate<double>(cfg, inv, io) : cmd_evaluate<float>(cfg, inv, io);
    if (inspect->parsed()) return f64 ? cmd_inspect<double>(cfg, inv, io) : cmd_inspect<float>(cfg, inv, io);
    if (synth->parsed()) return cmd_synth(cfg, io);
    return cmd_selftest(cfg, inv, io);
  } catch (const ConfigError& e) {
    io.err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    io.err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    io.err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    io.err << "data error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace trinet::cli

#endif  // TRINET_CLI_HPP
