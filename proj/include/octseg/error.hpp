#pragma once

#include <stdexcept>
#include <string>

namespace octseg {

/// Base for every error raised by the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values or inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Array dimensions that violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or image decoding failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed structured input (annotation records, JSON files).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that breaks a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Raised when the optimizer meets a NaN/Inf gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace octseg
