#pragma once

#include <stdexcept>
#include <string>

namespace gradnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration: bad hyperparameter, unknown layer tag, combinator
// branches with different output shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition (non-scalar loss, BN batch of 1).
class ContractError : public Error {
 public:
  using Error::Error;
};

// An object was used in the wrong lifecycle state (second backward on a tape).
class StateError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// NaN/inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradnet
