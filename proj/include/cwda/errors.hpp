#pragma once

#include <stdexcept>
#include <string>

namespace cwda {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, hidden
/// labels requested, empty inputs).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range scalar parameter (negative GRL lambda, negative loss weight).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Invalid run or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Batch statistics cannot be formed (fewer than two spatial positions).
class DegenerateStatisticsError : public Error {
 public:
  using Error::Error;
};

/// A loss became NaN or infinite during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cwda
