#pragma once

#include <stdexcept>
#include <string>

namespace wcseg {

// Bad arguments, shapes or configuration. The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed files: bad magic, truncated payloads, non-binary masks.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// A statistic cannot be computed for the given data (n too small, zero variance, ...).
class DegenerateDataError : public std::domain_error {
 public:
  explicit DegenerateDataError(const std::string& what) : std::domain_error(what) {}
};

// Numerical failure during training (NaN/Inf loss).
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// Train/test subject overlap detected in a split.
class LeakageError : public std::logic_error {
 public:
  explicit LeakageError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace wcseg
