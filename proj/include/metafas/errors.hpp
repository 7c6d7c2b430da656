#pragma once

#include <stdexcept>
#include <string>

namespace metafas {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when tensor shapes do not conform for an operation. The message
/// names the operation and the offending dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised on invalid arguments or configuration values.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Raised by the differentiation engine (non-scalar loss, detached graph).
class AutodiffError : public Error {
 public:
  using Error::Error;
};

/// Raised when a training loss turns non-finite. Carries the inner-update
/// step index at which divergence was detected (-1 if not applicable).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, int step) : Error(msg), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Raised on malformed manifests, unreadable image files and the like.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace metafas
