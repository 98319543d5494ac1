#pragma once

#include <stdexcept>
#include <string>

namespace coffe {

/// Base class for every error raised by the library. `kind()` is a short
/// stable tag used in CLI diagnostics ("dimension", "format", ...).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Shape or extent mismatch between operands.
struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

/// Caller violated a precondition that is not a shape problem.
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

/// NaN or Inf produced or consumed by a numeric op.
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

/// Malformed binary container (bad magic, truncation, bad header).
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

/// Well-formed data that violates a semantic invariant.
struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace coffe
