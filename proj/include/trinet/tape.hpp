#ifndef TRINET_TAPE_HPP
#define TRINET_TAPE_HPP

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "trinet/errors.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
};

/// Reverse-mode gradient tape.
///
/// Every node holds a forward value and, when it participates in
/// differentiation, a backward rule that reads the node's gradient and
/// accumulates into the gradients of its inputs. Nodes are appended in
/// evaluation order, so the tape is topologically sorted by construction.
/// Parameter leaves alias an external tensor and accumulate straight into
/// that tensor's gradient buffer.
///
/// A tape built with `recording == false` stores values only; it is meant
/// for inference and never allocates gradients.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf that never receives a gradient (input data, targets).
  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false});
    return {this, nodes_.size() - 1};
  }

  /// Leaf whose gradient is kept on the tape (see `grad`).
  Var<T> variable(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, recording_});
    return {this, nodes_.size() - 1};
  }

  /// Leaf aliasing `param`; backward accumulates into `param.grad()`.
  /// `param` must outlive the tape.
  Var<T> parameter(Tensor<T>& param) {
    nodes_.push_back(Node{Tensor<T>{}, &param, {}, {}, recording_});
    return {this, nodes_.size() - 1};
  }

  /// Appends the result of an operation. `backward` is dropped when no
  /// input requires a gradient or the tape is not recording.
  Var<T> record(Tensor<T> value, std::initializer_list<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    if (recording_) {
      for (std::size_t id : inputs) {
        if (id >= nodes_.size()) throw UsageError("operation input recorded after its output");
        needs = needs || nodes_[id].requires_grad;
      }
    }
    nodes_.push_back(Node{std::move(value), nullptr, {}, needs ? std::move(backward) : BackwardFn{}, needs});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& node = nodes_.at(id);
    return node.param ? *node.param : node.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Zero-initialized on first access; accumulation target for backward rules.
  std::span<T> grad_buffer(std::size_t id) {
    Node& node = nodes_.at(id);
    if (node.param) return node.param->grad();
    if (node.grad.empty()) node.grad.assign(value(id).size(), T(0));
    return node.grad;
  }

  /// Gradient currently stored for a non-parameter node; empty when none
  /// has been propagated to it.
  std::span<const T> grad(Var<T> v) const {
    const Node& node = nodes_.at(v.id);
    if (node.param) return node.param->has_grad() ? node.param->grad() : std::span<const T>{};
    return node.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw UsageError("loss belongs to a different tape");
    if (!recording_) throw UsageError("backward on a non-recording tape");
    if (value(loss.id).size() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + value(loss.id).shape().str());
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward && !node.grad.empty()) node.backward(*this, i);
    }
  }

  /// Clears gradients held on the tape. Parameter gradients live in the
  /// parameter tensors and are cleared by their owner.
  void zero_grad() {
    for (Node& node : nodes_) node.grad.clear();
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T>* param = nullptr;
    Buffer<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  bool recording_;
  std::deque<Node> nodes_;
};

}  // namespace trinet

#endif  // TRINET_TAPE_HPP
