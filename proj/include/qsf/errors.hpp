#pragma once

#include <stdexcept>
#include <string>

namespace qsf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input outside the range where a kernel meets its accuracy contract.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Iterative kernel failed to converge, or a non-finite value appeared.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A matrix that must be inverted is numerically singular.
class ConditioningError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoint or CSV content.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TransferError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string last_good)
      : Error(what), last_good_checkpoint_(std::move(last_good)) {}
  const std::string& last_good_checkpoint() const { return last_good_checkpoint_; }

 private:
  std::string last_good_checkpoint_;
};

}  // namespace qsf
