#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace star {

// Error taxonomy shared by the whole library. The CLI maps these onto
// process exit codes, so new error paths should reuse one of these types.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range row/category/target index.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Violated API precondition (non-scalar backward, missing grad, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or unknown config key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File contents that parse but violate the data model.
class DataError : public Error {
 public:
  using Error::Error;
};

// Semantic/manifest validation failure.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Joint index or partition inconsistency.
class LayoutError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// A primitive produced NaN/Inf; raised at the producing op.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Checkpoint does not match the requested configuration or dataset.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

}  // namespace star
