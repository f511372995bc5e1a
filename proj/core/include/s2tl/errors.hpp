#pragma once

#include <stdexcept>
#include <string>

namespace s2tl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an API call was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid or conflicting configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: WAV files, manifests, checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf detected where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace s2tl
