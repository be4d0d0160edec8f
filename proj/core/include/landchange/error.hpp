#pragma once

#include <stdexcept>
#include <string>

namespace landchange {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: shapes, ranges, unknown ids, malformed files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A covariance block that is not positive definite even after jitter.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Internal invariant broken; indicates a bug rather than bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace landchange
