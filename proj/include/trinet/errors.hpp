#ifndef TRINET_ERRORS_HPP
#define TRINET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace trinet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Unsupported kernel size, stride, filter kind or other static setting.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Stateful component used before it was initialized (e.g. batch-norm
/// running statistics in inference mode).
class StateError : public Error {
 public:
  using Error::Error;
};

/// API misuse such as calling backward on a non-scalar node.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible checkpoint file.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or inconsistent dataset files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered during training or evaluation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Input too degenerate for the requested statistic (e.g. Otsu on a
/// constant map).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A metric whose denominator is zero. `metric()` names the metric.
class UndefinedMetricError : public Error {
 public:
  UndefinedMetricError(std::string metric, const std::string& what)
      : Error(what), metric_(std::move(metric)) {}
  const std::string& metric() const noexcept { return metric_; }

 private:
  std::string metric_;
};

}  // namespace trinet

#endif  // TRINET_ERRORS_HPP
