#ifndef TRINET_TENSOR_HPP
#define TRINET_TENSOR_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trinet/errors.hpp"

namespace trinet {

/// Storage with a fixed base alignment. Eigen's vectorized kernels pick
/// their peeling by pointer alignment, so an arbitrary heap alignment would
/// make float results depend on allocator history.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// (batch, channels, height, width).
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

/// Dense rank-4 array in row-major (n,c,h,w) order with an optional
/// gradient buffer of the same shape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, Buffer<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(shape, Buffer<T>(data.begin(), data.end())) {}
  Tensor(Shape shape, std::initializer_list<T> values) : Tensor(shape, Buffer<T>(values)) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  Buffer<T>& storage() noexcept { return data_; }
  const Buffer<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[index(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[index(n, c, y, x)];
  }

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<T> grad() {
    ensure_grad();
    return *grad_;
  }
  std::span<const T> grad() const {
    if (!grad_) throw UsageError("tensor has no gradient buffer");
    return *grad_;
  }
  void ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), T(0));
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }
  void drop_grad() noexcept { grad_.reset(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Value copy converted to another scalar type. The gradient is not copied.
  template <typename U>
  Tensor<U> cast() const {
    Buffer<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_{};
  Buffer<T> data_;
  std::optional<Buffer<T>> grad_;
};

}  // namespace trinet

#endif  // TRINET_TENSOR_HPP
