#ifndef TRINET_INFERENCE_HPP
#define TRINET_INFERENCE_HPP

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <thread>
#include <vector>

#include "trinet/data.hpp"
#include "trinet/evaluation.hpp"
#include "trinet/network.hpp"

namespace trinet {

/// Stitched full-resolution outputs: probability plus the three branch
/// activation maps (1x1, 3x3, 5x5), each (1,1,h,w).
struct PredictedMaps {
  Tensor<float> probability;
  std::array<Tensor<float>, 3> branches;
};

struct InferenceOptions {
  std::size_t patch = kPatchSize;
  std::size_t stride = kTileStride;
  std::size_t batch = 16;
};

/// Tiles `image` ((1,3,h,w), raw [0,1]), runs the network in inference mode
/// on every tile after mean subtraction, and averages overlapping outputs.
template <typename T>
PredictedMaps predict_maps(TriNetwork<T>& net, const Tensor<float>& image, const ChannelStats& stats,
                           const InferenceOptions& opt = {}) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("predict: image must be (1,3,h,w), got " + s.str());
  const PatchPlan plan = tile_plan(s.h, s.w, opt.stride, opt.patch);
  const std::size_t p = opt.patch;
  const std::size_t n = plan.anchors.size();
  Tensor<T> outputs(Shape{n, 4, p, p});
  for (std::size_t begin = 0; begin < n; begin += opt.batch) {
    const std::size_t count = std::min(opt.batch, n - begin);
    Tensor<T> patches(Shape{count, 3, p, p});
    for (std::size_t k = 0; k < count; ++k) {
      extract_patch(image, plan.anchors[begin + k].y, plan.anchors[begin + k].x, patches, k);
    }
    normalize_image(patches, stats);
    auto maps = net.infer(patches);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t plane = p * p;
      T* dst = outputs.data().data() + (begin + k) * 4 * plane;
      std::copy_n(maps.probability.data().data() + k * plane, plane, dst);
      for (std::size_t b = 0; b < 3; ++b) std::copy_n(maps.branches[b].data().data() + k * plane, plane, dst + (b + 1) * plane);
    }
  }
  const Tensor<float> stitched = stitch(plan, s.h, s.w, outputs);
  PredictedMaps out;
  const std::size_t plane = s.h * s.w;
  out.probability = Tensor<float>(Shape{1, 1, s.h, s.w});
  std::copy_n(stitched.data().data(), plane, out.probability.data().data());
  for (std::size_t b = 0; b < 3; ++b) {
    out.branches[b] = Tensor<float>(Shape{1, 1, s.h, s.w});
    std::copy_n(stitched.data().data() + (b + 1) * plane, plane, out.branches[b].data().data());
  }
  return out;
}

inline std::vector<std::uint8_t> to_mask(const Tensor<float>& mask) {
  std::vector<std::uint8_t> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] != 0.0f ? 1 : 0;
  return out;
}

inline ProbabilityMap make_probability_map(const std::string& id, const Tensor<float>& probs, const Tensor<float>& fov) {
  ProbabilityMap m;
  m.id = id;
  m.height = probs.shape().h;
  m.width = probs.shape().w;
  m.probs.assign(probs.data().begin(), probs.data().end());
  m.fov = to_mask(fov);
  m.validate();
  return m;
}

struct EvaluationOptions {
  InferenceOptions inference;
  bool per_image_threshold = false;
  std::size_t threads = 1;
};

struct EvaluationResult {
  DatasetReport report;
  std::vector<ProbabilityMap> maps;
  std::vector<std::vector<std::uint8_t>> truths;
};

/// Stitched probability maps for every sample, in sample order. Images are
/// distributed over `threads` workers; the network is only read.
template <typename T>
std::vector<ProbabilityMap> predict_dataset(TriNetwork<T>& net, std::span<const FundusSample> samples,
                                            const ChannelStats& stats, const EvaluationOptions& opt = {}) {
  std::vector<ProbabilityMap> maps(samples.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < samples.size(); i += stride) {
      const PredictedMaps pm = predict_maps(net, samples[i].image, stats, opt.inference);
      maps[i] = make_probability_map(samples[i].id, pm.probability, samples[i].fov);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, samples.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return maps;
}

/// normalize -> tile -> forward (infer) -> stitch for every test image,
/// then pooled Otsu threshold, pooled confusion counts and pooled AUC.
template <typename T>
EvaluationResult evaluate_dataset(TriNetwork<T>& net, std::span<const FundusSample> samples, const ChannelStats& stats,
                                  const EvaluationOptions& opt = {}) {
  EvaluationResult res;
  res.maps = predict_dataset(net, samples, stats, opt);
  for (const FundusSample& s : samples) res.truths.push_back(to_mask(s.vessel));
  res.report = score_maps(res.maps, res.truths, opt.per_image_threshold);
  return res;
}

/// Scores the ground-truth masks themselves as probability maps; every
/// metric must come out as 1.
inline EvaluationResult evaluate_oracle(std::span<const FundusSample> samples) {
  EvaluationResult res;
  for (const FundusSample& s : samples) {
    res.maps.push_back(make_probability_map(s.id, s.vessel, s.fov));
    res.truths.push_back(to_mask(s.vessel));
  }
  res.report = score_maps(res.maps, res.truths);
  return res;
}

}  // namespace trinet

#endif  // TRINET_INFERENCE_HPP
