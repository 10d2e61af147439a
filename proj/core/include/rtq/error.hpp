#pragma once

#include <stdexcept>
#include <string>

namespace rtq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or structural argument (k > n, F mod S != 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a precondition that is not a plain parameter range issue.
class ContractError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class TokenizationError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required (NaN loss, log of zero).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtq
