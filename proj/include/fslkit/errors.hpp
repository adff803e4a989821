#pragma once

#include <stdexcept>
#include <string>

namespace fsl {

// Base for everything this library throws.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent user configuration (CLI exit code 2).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Bad or missing input data: files, manifests, splits (CLI exit code 3).
class DataError : public Error {
public:
  using Error::Error;
};

// Numerical failure that survived the rescue policies (CLI exit code 4).
class NumericError : public Error {
public:
  using Error::Error;
};

// Shape / extent mismatch between tensors.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Cholesky pivot <= 0: the matrix is not positive definite. Callers may
// retry with a jittered diagonal before surfacing a NumericError.
class NotPositiveDefiniteError : public NumericError {
public:
  using NumericError::NumericError;
};

}  // namespace fsl
