#pragma once

#include <stdexcept>
#include <string>

namespace primed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (e.g. log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A metric that is not defined for its input (e.g. AUROC over a single class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or similar failure during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace primed
