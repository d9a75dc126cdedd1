#pragma once

#include <stdexcept>
#include <string>

namespace dlsa {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition (bad argument value, empty input, out-of-range label).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not line up.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN/Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Object used in a state that forbids the call (e.g. a consumed tape).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or corrupted file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Optimization diverged or the cascade ran out of samples.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace dlsa
