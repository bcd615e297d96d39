#ifndef TRINET_CHECKPOINT_HPP
#define TRINET_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "trinet/data.hpp"
#include "trinet/errors.hpp"
#include "trinet/network.hpp"
#include "trinet/optim.hpp"
#include "trinet/tensor.hpp"

// Checkpoint layout (little-endian):
//   "TRIV" | version u32 | tensor count u32 |
//   per tensor: name length u32, UTF-8 name, rank u8, dims u32 x rank,
//               dtype u8 (0 = f32, 1 = f64), raw values.
// Besides the network tensors a checkpoint carries "meta.widths"
// (input channels, encoder widths, bottleneck) and optionally
// "data.channel_means" and the Adam moments ("adam.step", "adam.m.<name>",
// "adam.v.<name>").

namespace trinet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'T', 'R', 'I', 'V'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <typename T>
struct TensorRecord {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::string& what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw LoadError("checkpoint truncated while reading " + what);
  return v;
}

/// Rank actually needed to describe `s` (trailing unit dims dropped, min 1).
inline std::vector<std::uint32_t> compact_dims(const Shape& s) {
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                  static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  while (dims.size() > 1 && dims.back() == 1) dims.pop_back();
  return dims;
}

inline Shape expand_dims(const std::vector<std::uint32_t>& dims) {
  std::array<std::size_t, 4> d{1, 1, 1, 1};
  for (std::size_t i = 0; i < dims.size(); ++i) d[i] = dims[i];
  return Shape{d[0], d[1], d[2], d[3]};
}

}  // namespace detail

/// Writes records in order. Values are stored in the tensors' own precision.
template <typename T>
void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorRecord<T>>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    const auto dims = detail::compact_dims(rec.tensor.shape());
    if (rec.tensor.shape().numel() == 0) throw Error("cannot serialize empty tensor " + rec.name);
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(dims.size()));
    for (std::uint32_t d : dims) detail::put<std::uint32_t>(os, d);
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
    os.write(reinterpret_cast<const char*>(rec.tensor.data().data()),
             static_cast<std::streamsize>(rec.tensor.size() * sizeof(T)));
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

/// Reads every record, converting values to T. Throws LoadError on a bad
/// magic, unsupported version or dtype, truncation, or trailing bytes.
template <typename T>
std::vector<TensorRecord<T>> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw LoadError("checkpoint truncated while reading magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw LoadError("not a checkpoint (bad magic): " + path.string());
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(is, "tensor count");
  std::vector<TensorRecord<T>> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = detail::get<std::uint32_t>(is, "name length");
    if (len > 4096) throw LoadError("implausible tensor name length " + std::to_string(len));
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw LoadError("checkpoint truncated while reading a tensor name");
    const auto rank = detail::get<std::uint8_t>(is, name + " rank");
    if (rank == 0 || rank > 4) throw LoadError(name + ": unsupported rank " + std::to_string(rank));
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = detail::get<std::uint32_t>(is, name + " dims");
    const Shape shape = detail::expand_dims(dims);
    if (shape.numel() == 0 || shape.numel() > (std::size_t{1} << 31)) throw LoadError(name + ": implausible size");
    const auto dtype = detail::get<std::uint8_t>(is, name + " dtype");
    Tensor<T> t(shape);
    if (dtype == static_cast<std::uint8_t>(DType::f32)) {
      std::vector<float> raw(shape.numel());
      if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
        throw LoadError("checkpoint truncated inside tensor " + name);
      }
      for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<T>(raw[i]);
    } else if (dtype == static_cast<std::uint8_t>(DType::f64)) {
      std::vector<double> raw(shape.numel());
      if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(double)))) {
        throw LoadError("checkpoint truncated inside tensor " + name);
      }
      for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<T>(raw[i]);
    } else {
      throw LoadError(name + ": unknown dtype tag " + std::to_string(dtype));
    }
    out.push_back({std::move(name), std::move(t)});
  }
  if (is.peek() != std::char_traits<char>::eof()) throw LoadError("trailing bytes after the last tensor");
  return out;
}

template <typename T>
struct CheckpointExtras {
  std::optional<ChannelStats> stats;
  const AdamState<T>* adam = nullptr;
};

template <typename T>
struct LoadedCheckpoint {
  TriNetwork<T> net;
  std::optional<ChannelStats> stats;
  std::optional<AdamState<T>> adam;
};

template <typename T>
std::vector<TensorRecord<T>> checkpoint_records(TriNetwork<T>& net, const CheckpointExtras<T>& extras = {}) {
  std::vector<TensorRecord<T>> recs;
  const TriNetworkConfig& cfg = net.config();
  std::vector<T> widths{static_cast<T>(cfg.in_channels)};
  for (std::size_t w : cfg.encoder) widths.push_back(static_cast<T>(w));
  widths.push_back(static_cast<T>(cfg.bottleneck));
  recs.push_back({"meta.widths", Tensor<T>(Shape{widths.size(), 1, 1, 1}, widths)});
  for (const auto& nt : net.tensors()) recs.push_back({nt.name, *nt.tensor});
  for (auto& rec : recs) rec.tensor.drop_grad();
  if (extras.stats) {
    const auto& m = extras.stats->mean;
    recs.push_back({"data.channel_means",
                    Tensor<T>(Shape{3, 1, 1, 1}, {static_cast<T>(m[0]), static_cast<T>(m[1]), static_cast<T>(m[2])})});
  }
  if (extras.adam) {
    const auto params = net.parameters();
    if (extras.adam->m.size() != params.size()) throw UsageError("Adam state does not match the network");
    recs.push_back({"adam.step", Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(extras.adam->step))});
    for (std::size_t i = 0; i < params.size(); ++i) {
      recs.push_back({"adam.m." + params[i].name, extras.adam->m[i]});
      recs.push_back({"adam.v." + params[i].name, extras.adam->v[i]});
    }
  }
  return recs;
}

template <typename T>
void save_checkpoint(TriNetwork<T>& net, const std::filesystem::path& path, const CheckpointExtras<T>& extras = {}) {
  write_tensor_file(path, checkpoint_records(net, extras));
}

/// Rebuilds the network described by the file. Every network tensor must be
/// present with its exact shape and no unknown names may appear; otherwise
/// LoadError is thrown and nothing is returned.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  auto records = read_tensor_file<T>(path);
  std::map<std::string, Tensor<T>*> by_name;
  for (auto& r : records) {
    if (!by_name.emplace(r.name, &r.tensor).second) throw LoadError("duplicate tensor " + r.name);
  }
  auto meta = by_name.find("meta.widths");
  if (meta == by_name.end()) throw LoadError("checkpoint lacks meta.widths");
  const Tensor<T>& widths = *meta->second;
  if (widths.size() < 3) throw LoadError("meta.widths too short");
  TriNetworkConfig cfg;
  cfg.in_channels = static_cast<std::size_t>(widths[0]);
  cfg.encoder.clear();
  for (std::size_t i = 1; i + 1 < widths.size(); ++i) cfg.encoder.push_back(static_cast<std::size_t>(widths[i]));
  cfg.bottleneck = static_cast<std::size_t>(widths[widths.size() - 1]);

  LoadedCheckpoint<T> out{TriNetwork<T>(cfg), std::nullopt, std::nullopt};
  std::size_t used = 1;
  for (const auto& nt : out.net.tensors()) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw LoadError("checkpoint lacks tensor " + nt.name);
    if (!(it->second->shape() == nt.tensor->shape())) {
      throw LoadError(nt.name + ": shape " + it->second->shape().str() + " does not match " + nt.tensor->shape().str());
    }
    *nt.tensor = std::move(*it->second);
    ++used;
  }
  out.net.set_running_stats_initialized(true);

  if (auto it = by_name.find("data.channel_means"); it != by_name.end()) {
    if (it->second->size() != 3) throw LoadError("data.channel_means must hold 3 values");
    ChannelStats stats;
    for (std::size_t c = 0; c < 3; ++c) stats.mean[c] = static_cast<double>((*it->second)[c]);
    out.stats = stats;
    ++used;
  }
  if (auto it = by_name.find("adam.step"); it != by_name.end()) {
    const auto params = out.net.parameters();
    AdamState<T> adam(params);
    adam.step = static_cast<std::uint64_t>((*it->second)[0]);
    ++used;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (auto [prefix, dst] : {std::pair{"adam.m.", &adam.m[i]}, std::pair{"adam.v.", &adam.v[i]}}) {
        auto mit = by_name.find(prefix + params[i].name);
        if (mit == by_name.end()) throw LoadError("checkpoint lacks " + std::string(prefix) + params[i].name);
        if (!(mit->second->shape() == dst->shape())) throw LoadError(mit->first + ": shape mismatch");
        *dst = std::move(*mit->second);
        ++used;
      }
    }
    out.adam = std::move(adam);
  }
  if (used != records.size()) {
    std::string unknown;
    std::map<std::string, bool> known;
    for (const auto& nt : out.net.tensors()) known[nt.name] = true;
    for (const auto& r : records) {
      const bool meta_like = r.name == "meta.widths" || r.name == "data.channel_means" || r.name == "adam.step" ||
                             r.name.rfind("adam.m.", 0) == 0 || r.name.rfind("adam.v.", 0) == 0;
      if (!known.count(r.name) && !meta_like) {
        unknown = r.name;
        break;
      }
    }
    throw LoadError("unknown tensor in checkpoint: " + (unknown.empty() ? std::string("(unmatched optimizer state)") : unknown));
  }
  return out;
}

}  // namespace trinet

#endif  // TRINET_CHECKPOINT_HPP
