#ifndef TRINET_NETWORK_HPP
#define TRINET_NETWORK_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trinet/errors.hpp"
#include "trinet/ops.hpp"
#include "trinet/tape.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

/// Filter type of a sub-network. The 5x5 kind is realised as two chained
/// 3x3 convolutions.
enum class FilterKind { k1x1, k3x3, k5x5_factorized };

inline constexpr std::array<FilterKind, 3> kAllFilterKinds{FilterKind::k1x1, FilterKind::k3x3,
                                                           FilterKind::k5x5_factorized};

inline std::string_view to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::k1x1:
      return "1x1";
    case FilterKind::k3x3:
      return "3x3";
    case FilterKind::k5x5_factorized:
      return "5x5";
  }
  throw ConfigError("invalid filter kind");
}

enum class Activation { relu, sigmoid };

/// What a named tensor is: a trainable parameter or a batch-norm buffer.
enum class TensorRole { parameter, running_stat };

struct ModuleBlockSpec {
  FilterKind kind = FilterKind::k3x3;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  /// Width of the leading 1x1 reduction; ignored for 1x1 blocks.
  std::size_t reduce_channels = 0;
  std::size_t stride = 1;
};

/// One convolutional layer: batch norm, then convolution, then activation.
template <typename T>
struct ConvUnit {
  std::string name;
  std::string layer;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Activation activation = Activation::relu;

  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> bn;
  Tensor<T> weight;
  Tensor<T> bias;

  ConvUnit() = default;
  ConvUnit(std::string unit_name, std::string layer_label, std::size_t in, std::size_t out, std::size_t k,
           std::size_t s = 1, Activation act = Activation::relu)
      : name(std::move(unit_name)),
        layer(std::move(layer_label)),
        in_channels(in),
        out_channels(out),
        kernel(k),
        stride(s),
        activation(act),
        gamma(Shape{1, in, 1, 1}, T(1)),
        beta(Shape{1, in, 1, 1}),
        bn(in),
        weight(Shape{out, in, k, k}),
        bias(Shape{1, out, 1, 1}) {
    if (k != 1 && k != 3) throw ConfigError("conv unit " + name + ": kernel must be 1 or 3");
    if (s != 1 && s != 2) throw ConfigError("conv unit " + name + ": stride must be 1 or 2");
  }

  Var<T> forward(Tape<T>& tape, Var<T> x, Mode mode) {
    Var<T> h = batchnorm(x, tape.parameter(gamma), tape.parameter(beta), bn, mode);
    h = conv2d(h, tape.parameter(weight), std::optional<Var<T>>(tape.parameter(bias)), stride, kernel / 2);
    return activation == Activation::relu ? relu(h) : sigmoid(h);
  }

  template <typename F>
  void visit(F&& f) {
    f(name + ".bn.gamma", gamma, TensorRole::parameter, layer);
    f(name + ".bn.beta", beta, TensorRole::parameter, layer);
    f(name + ".bn.running_mean", bn.running_mean, TensorRole::running_stat, layer);
    f(name + ".bn.running_var", bn.running_var, TensorRole::running_stat, layer);
    f(name + ".conv.weight", weight, TensorRole::parameter, layer);
    f(name + ".conv.bias", bias, TensorRole::parameter, layer);
  }
};

/// Module block: optional 1x1 reduction, the kind's main filter(s), and a
/// residual shortcut (identity, or a 1x1 projection when widths differ).
template <typename T>
struct ModuleBlock {
  ModuleBlockSpec spec;
  std::optional<ConvUnit<T>> reduce;
  std::vector<ConvUnit<T>> main;
  std::optional<ConvUnit<T>> projection;

  Var<T> forward(Tape<T>& tape, Var<T> x, Mode mode) {
    Var<T> h = x;
    if (reduce) h = reduce->forward(tape, h, mode);
    for (ConvUnit<T>& unit : main) h = unit.forward(tape, h, mode);
    Var<T> shortcut = projection ? projection->forward(tape, x, mode) : x;
    return residual_add(h, shortcut);
  }

  std::size_t conv_count() const {
    return (reduce ? 1 : 0) + main.size() + (projection ? 1 : 0);
  }

  template <typename F>
  void visit(F&& f) {
    if (reduce) reduce->visit(f);
    for (ConvUnit<T>& unit : main) unit.visit(f);
    if (projection) projection->visit(f);
  }
};

template <typename T>
ModuleBlock<T> build_module_block(const ModuleBlockSpec& spec, const std::string& name,
                                  const std::string& layer) {
  if (spec.stride != 1) throw ConfigError("module block " + name + ": stride must be 1");
  if (spec.in_channels == 0 || spec.out_channels == 0) {
    throw ConfigError("module block " + name + ": channel counts must be positive");
  }
  ModuleBlock<T> block;
  block.spec = spec;
  switch (spec.kind) {
    case FilterKind::k1x1:
      block.main.emplace_back(name + ".main0", layer, spec.in_channels, spec.out_channels, 1);
      break;
    case FilterKind::k3x3:
    case FilterKind::k5x5_factorized: {
      if (spec.reduce_channels == 0) throw ConfigError("module block " + name + ": reduce width must be positive");
      block.reduce.emplace(name + ".reduce", layer, spec.in_channels, spec.reduce_channels, 1);
      block.main.emplace_back(name + ".main0", layer, spec.reduce_channels, spec.out_channels, 3);
      if (spec.kind == FilterKind::k5x5_factorized) {
        block.main.emplace_back(name + ".main1", layer, spec.out_channels, spec.out_channels, 3);
      }
      break;
    }
    default:
      throw ConfigError("module block " + name + ": invalid filter kind");
  }
  if (spec.in_channels != spec.out_channels) {
    block.projection.emplace(name + ".proj", layer, spec.in_channels, spec.out_channels, 1);
  }
  return block;
}

/// Channel schedule of one U-net-shaped sub-network. Decoder widths mirror
/// the encoder; every upsampling step first halves the incoming width with
/// a 1x1 convolution.
struct SubNetworkConfig {
  FilterKind kind = FilterKind::k3x3;
  std::size_t in_channels = 3;
  std::vector<std::size_t> encoder{8, 16, 32, 64};
  std::size_t bottleneck = 128;

  static SubNetworkConfig standard(FilterKind kind) { return SubNetworkConfig{kind}; }

  std::size_t levels() const noexcept { return encoder.size(); }
  std::size_t size_multiple() const noexcept { return std::size_t{1} << levels(); }
  bool uses_max_pool() const noexcept { return kind == FilterKind::k1x1; }

  /// Widths of the 1x1 reductions feeding each upsampling, deepest first.
  std::vector<std::size_t> upsampling_filters() const {
    std::vector<std::size_t> out;
    std::size_t incoming = bottleneck;
    for (std::size_t i = levels(); i-- > 0;) {
      out.push_back(incoming / 2);
      incoming = encoder[i];
    }
    return out;
  }

  std::vector<std::size_t> decoder_filters() const { return {encoder.rbegin(), encoder.rend()}; }

  /// Filter numbers of layers 1..2L+2 (encoder, bottleneck, decoder, output).
  std::vector<std::size_t> layer_filters() const {
    std::vector<std::size_t> out(encoder.begin(), encoder.end());
    out.push_back(bottleneck);
    for (std::size_t d : decoder_filters()) out.push_back(d);
    out.push_back(1);
    return out;
  }

  void validate() const {
    if (encoder.empty()) throw ConfigError("sub-network needs at least one encoder level");
    if (in_channels == 0) throw ConfigError("sub-network input channels must be positive");
    std::size_t incoming = bottleneck;
    for (std::size_t i = levels(); i-- > 0;) {
      if (encoder[i] == 0 || incoming / 2 == 0) throw ConfigError("sub-network widths too small");
      incoming = encoder[i];
    }
  }
};

/// Widths shared by the three sub-networks.
struct TriNetworkConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> encoder{8, 16, 32, 64};
  std::size_t bottleneck = 128;

  /// Every width divided by `divisor` (rounded down, minimum 1).
  static TriNetworkConfig narrowed(std::size_t divisor) {
    TriNetworkConfig cfg;
    if (divisor == 0) throw ConfigError("width divisor must be positive");
    for (std::size_t& w : cfg.encoder) w = std::max<std::size_t>(1, w / divisor);
    cfg.bottleneck = std::max<std::size_t>(2, cfg.bottleneck / divisor);
    return cfg;
  }

  SubNetworkConfig branch(FilterKind kind) const { return SubNetworkConfig{kind, in_channels, encoder, bottleneck}; }
  std::size_t size_multiple() const noexcept { return std::size_t{1} << encoder.size(); }
  bool operator==(const TriNetworkConfig&) const = default;
};

template <typename T>
class SubNetwork {
 public:
  SubNetwork() = default;
  SubNetwork(const SubNetworkConfig& config, const std::string& prefix) : config_(config) {
    config_.validate();
    const std::size_t levels = config_.levels();
    std::size_t in = config_.in_channels;
    for (std::size_t i = 0; i < levels; ++i) {
      const std::size_t out = config_.encoder[i];
      const std::string layer = "layer" + std::to_string(i + 1);
      const std::string name = prefix + ".enc" + std::to_string(i + 1);
      encoder_.push_back(build_module_block<T>({config_.kind, in, out, out, 1}, name, layer));
      std::vector<ConvUnit<T>> down;
      const std::string dname = prefix + ".down" + std::to_string(i + 1);
      if (config_.kind == FilterKind::k3x3) {
        down.emplace_back(dname + ".0", layer, out, out, 3, 2);
      } else if (config_.kind == FilterKind::k5x5_factorized) {
        down.emplace_back(dname + ".0", layer, out, out, 3, 2);
        down.emplace_back(dname + ".1", layer, out, out, 3, 1);
      }
      downsample_.push_back(std::move(down));
      in = out;
    }
    bottleneck_ = build_module_block<T>({config_.kind, in, config_.bottleneck, config_.bottleneck, 1},
                                        prefix + ".enc" + std::to_string(levels + 1),
                                        "layer" + std::to_string(levels + 1));
    std::size_t incoming = config_.bottleneck;
    for (std::size_t j = 0; j < levels; ++j) {
      const std::size_t skip = config_.encoder[levels - 1 - j];
      const std::size_t reduced = incoming / 2;
      up_.emplace_back(prefix + ".up" + std::to_string(levels + 1 + j),
                       "layer" + std::to_string(levels + 1 + j), incoming, reduced, 1);
      decoder_.push_back(build_module_block<T>({config_.kind, reduced + skip, skip, skip, 1},
                                               prefix + ".dec" + std::to_string(levels + 2 + j),
                                               "layer" + std::to_string(levels + 2 + j)));
      incoming = skip;
    }
    output_ = ConvUnit<T>(prefix + ".out", "layer" + std::to_string(2 * levels + 2), incoming, 1, 1);
  }

  const SubNetworkConfig& config() const noexcept { return config_; }

  struct Trace {
    std::vector<Shape> encoder;
    Shape bottleneck;
    std::vector<Shape> decoder_inputs;
  };

  /// Returns the post-ReLU single-channel map of the last layer.
  Var<T> forward(Tape<T>& tape, Var<T> x, Mode mode, Trace* trace = nullptr) {
    const Shape s = x.shape();
    const std::size_t m = config_.size_multiple();
    if (s.h % m != 0 || s.w % m != 0) {
      throw ShapeError("sub-network input " + s.str() + " must have height and width divisible by " +
                       std::to_string(m));
    }
    if (s.c != config_.in_channels) {
      throw ShapeError("sub-network expects " + std::to_string(config_.in_channels) + " channels, got " +
                       s.str());
    }
    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      h = encoder_[i].forward(tape, h, mode);
      skips.push_back(h);
      if (trace) trace->encoder.push_back(h.shape());
      if (config_.uses_max_pool()) {
        h = maxpool2x(h);
      } else {
        for (ConvUnit<T>& unit : downsample_[i]) h = unit.forward(tape, h, mode);
      }
    }
    h = bottleneck_.forward(tape, h, mode);
    if (trace) trace->bottleneck = h.shape();
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      h = up_[j].forward(tape, h, mode);
      h = bilinear_upsample2x(h);
      h = concat_channels(h, skips[skips.size() - 1 - j]);
      if (trace) trace->decoder_inputs.push_back(h.shape());
      h = decoder_[j].forward(tape, h, mode);
    }
    return output_.forward(tape, h, mode);
  }

  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      encoder_[i].visit(f);
      for (ConvUnit<T>& unit : downsample_[i]) unit.visit(f);
    }
    bottleneck_.visit(f);
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      up_[j].visit(f);
      decoder_[j].visit(f);
    }
    output_.visit(f);
  }

  template <typename F>
  void for_each_unit(F&& f) {
    auto block_units = [&](ModuleBlock<T>& b) {
      if (b.reduce) f(*b.reduce);
      for (ConvUnit<T>& u : b.main) f(u);
      if (b.projection) f(*b.projection);
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      block_units(encoder_[i]);
      for (ConvUnit<T>& u : downsample_[i]) f(u);
    }
    block_units(bottleneck_);
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      f(up_[j]);
      block_units(decoder_[j]);
    }
    f(output_);
  }

  const std::vector<ModuleBlock<T>>& encoder_blocks() const noexcept { return encoder_; }
  const ModuleBlock<T>& bottleneck_block() const noexcept { return bottleneck_; }
  const std::vector<ModuleBlock<T>>& decoder_blocks() const noexcept { return decoder_; }
  const std::vector<ConvUnit<T>>& upsampling_units() const noexcept { return up_; }
  const std::vector<std::vector<ConvUnit<T>>>& downsampling_units() const noexcept { return downsample_; }

 private:
  SubNetworkConfig config_;
  std::vector<ModuleBlock<T>> encoder_;
  std::vector<std::vector<ConvUnit<T>>> downsample_;
  ModuleBlock<T> bottleneck_;
  std::vector<ConvUnit<T>> up_;
  std::vector<ModuleBlock<T>> decoder_;
  ConvUnit<T> output_;
};

template <typename T>
SubNetwork<T> build_subnetwork(const SubNetworkConfig& config, const std::string& prefix = "branch") {
  return SubNetwork<T>(config, prefix);
}

template <typename T>
struct TriOutput {
  Var<T> probability;
  std::array<Var<T>, 3> branches;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor = nullptr;
  TensorRole role = TensorRole::parameter;
  std::string layer;
};

inline std::string branch_prefix(FilterKind kind) { return "b" + std::string(to_string(kind)); }

/// Three sub-networks (1x1, 3x3, factorized 5x5) whose single-channel maps
/// are concatenated and combined by batch norm, a 1x1 convolution and a
/// sigmoid.
template <typename T>
class TriNetwork {
 public:
  explicit TriNetwork(TriNetworkConfig config = {}) : config_(std::move(config)) {
    for (FilterKind kind : kAllFilterKinds) branches_.emplace_back(config_.branch(kind), branch_prefix(kind));
    combiner_ = ConvUnit<T>("combiner", "layer" + std::to_string(2 * config_.encoder.size() + 3), 3, 1, 1, 1,
                            Activation::sigmoid);
  }

  const TriNetworkConfig& config() const noexcept { return config_; }
  SubNetwork<T>& branch(std::size_t i) { return branches_.at(i); }
  const SubNetwork<T>& branch(std::size_t i) const { return branches_.at(i); }
  ConvUnit<T>& combiner() noexcept { return combiner_; }

  TriOutput<T> forward(Tape<T>& tape, Var<T> input, Mode mode) {
    TriOutput<T> out;
    for (std::size_t i = 0; i < 3; ++i) out.branches[i] = branches_[i].forward(tape, input, mode);
    Var<T> joined = concat_channels(concat_channels(out.branches[0], out.branches[1]), out.branches[2]);
    out.probability = combiner_.forward(tape, joined, mode);
    return out;
  }

  struct Maps {
    Tensor<T> probability;
    std::array<Tensor<T>, 3> branches;
  };

  /// Inference-mode forward without gradient bookkeeping.
  Maps infer(const Tensor<T>& input) {
    Tape<T> tape(false);
    TriOutput<T> out = forward(tape, tape.constant(input), Mode::infer);
    Maps maps;
    maps.probability = out.probability.value();
    for (std::size_t i = 0; i < 3; ++i) maps.branches[i] = out.branches[i].value();
    return maps;
  }

  template <typename F>
  void visit(F&& f) {
    for (SubNetwork<T>& b : branches_) b.visit(f);
    combiner_.visit(f);
  }

  std::vector<NamedTensor<T>> tensors() {
    std::vector<NamedTensor<T>> out;
    visit([&](const std::string& name, Tensor<T>& t, TensorRole role, const std::string& layer) {
      out.push_back({name, &t, role, layer});
    });
    return out;
  }

  /// Trainable tensors in a stable order.
  std::vector<NamedTensor<T>> parameters() {
    std::vector<NamedTensor<T>> out;
    for (auto& nt : tensors()) {
      if (nt.role == TensorRole::parameter) out.push_back(nt);
    }
    return out;
  }

  void zero_grad() {
    for (auto& nt : parameters()) nt.tensor->zero_grad();
  }

  /// Marks every batch-norm layer's running statistics as initialized or not.
  void set_running_stats_initialized(bool value) {
    for_each_unit([&](ConvUnit<T>& u) { u.bn.initialized = value; });
  }

  template <typename F>
  void for_each_unit(F&& f) {
    for (SubNetwork<T>& b : branches_) b.for_each_unit(f);
    f(combiner_);
  }

 private:
  TriNetworkConfig config_;
  std::vector<SubNetwork<T>> branches_;
  ConvUnit<T> combiner_;
};

/// He initialization: conv weights ~ N(0, 2/fan_in) with fan_in = inC*k*k,
/// zero biases, unit gamma, zero beta, running stats reset to (0, 1).
template <typename T>
void he_init(TriNetwork<T>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  net.visit([&](const std::string& name, Tensor<T>& t, TensorRole, const std::string&) {
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".conv.weight")) {
      const Shape s = t.shape();
      const double fan_in = static_cast<double>(s.c * s.h * s.w);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (T& v : t.data()) v = static_cast<T>(dist(rng));
    } else if (ends_with(".bn.gamma") || ends_with(".bn.running_var")) {
      t.fill(T(1));
    } else {
      t.fill(T(0));
    }
  });
  net.set_running_stats_initialized(true);
}

struct LayerCount {
  std::string layer;
  std::size_t count = 0;
};

struct ParameterCount {
  std::size_t total = 0;
  std::vector<LayerCount> per_layer;
};

/// Enumerates registered trainable tensors, grouped by layer label.
template <typename T>
ParameterCount count_parameters(TriNetwork<T>& net) {
  ParameterCount pc;
  std::map<std::string, std::size_t> by_layer;
  for (const auto& nt : net.parameters()) {
    pc.total += nt.tensor->size();
    by_layer[nt.layer] += nt.tensor->size();
  }
  for (const auto& [layer, count] : by_layer) pc.per_layer.push_back({layer, count});
  std::sort(pc.per_layer.begin(), pc.per_layer.end(), [](const LayerCount& a, const LayerCount& b) {
    const auto num = [](const std::string& s) { return std::stoul(s.substr(5)); };
    return num(a.layer) < num(b.layer);
  });
  return pc;
}

/// Closed-form parameter count of a configuration; one conv layer with
/// batch norm costs in*out*k*k + out + 2*in.
inline std::size_t parameter_formula(const TriNetworkConfig& cfg) {
  const auto unit = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out + 2 * in; };
  const auto block = [&](FilterKind kind, std::size_t in, std::size_t out) {
    std::size_t n = 0;
    if (kind == FilterKind::k1x1) {
      n += unit(in, out, 1);
    } else {
      n += unit(in, out, 1) + unit(out, out, 3);
      if (kind == FilterKind::k5x5_factorized) n += unit(out, out, 3);
    }
    if (in != out) n += unit(in, out, 1);
    return n;
  };
  std::size_t total = 0;
  for (FilterKind kind : kAllFilterKinds) {
    std::size_t in = cfg.in_channels;
    for (std::size_t w : cfg.encoder) {
      total += block(kind, in, w);
      if (kind == FilterKind::k3x3) total += unit(w, w, 3);
      if (kind == FilterKind::k5x5_factorized) total += 2 * unit(w, w, 3);
      in = w;
    }
    total += block(kind, in, cfg.bottleneck);
    std::size_t incoming = cfg.bottleneck;
    for (auto it = cfg.encoder.rbegin(); it != cfg.encoder.rend(); ++it) {
      total += unit(incoming, incoming / 2, 1);
      total += block(kind, incoming / 2 + *it, *it);
      incoming = *it;
    }
    total += unit(incoming, 1, 1);
  }
  return total + unit(3, 1, 1);
}

inline std::string format_parameter_table(const ParameterCount& pc, std::size_t reference = 250933) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "layer" << std::right << std::setw(12) << "parameters" << '\n';
  for (const auto& lc : pc.per_layer) os << std::left << std::setw(10) << lc.layer << std::right << std::setw(12) << lc.count << '\n';
  os << std::left << std::setw(10) << "total" << std::right << std::setw(12) << pc.total << '\n';
  const double ratio = static_cast<double>(pc.total) / static_cast<double>(reference);
  os << "published total " << reference << " (ratio " << std::fixed << std::setprecision(3) << ratio << ")\n";
  return os.str();
}

}  // namespace trinet

#endif  // TRINET_NETWORK_HPP
