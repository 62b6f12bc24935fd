#pragma once

#include <stdexcept>
#include <string>

namespace defer {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid domain, target or engine configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A query point lies outside the domain bounds.
class OutOfDomainError : public Error {
 public:
  using Error::Error;
};

/// A division would push a dimension past kMaxDepth.
class DepthLimitError : public Error {
 public:
  using Error::Error;
};

/// The density function failed or returned an unusable value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Internal bookkeeping went out of sync. Indicates a bug.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace defer
