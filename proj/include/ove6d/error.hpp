#pragma once

#include <stdexcept>
#include <string>

namespace ove6d {

/// Base of every error raised by the library. The CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration (unknown key, wrong type, out-of-range value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed input data: mesh files, frames, codebooks, checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t location)
      : DataError(what + " (at " + std::to_string(location) + ")"), location_(location) {}
  std::size_t location() const { return location_; }

 private:
  std::size_t location_;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Nothing was rendered: the object is behind the camera or outside the image.
class EmptyFrameError : public DataError {
 public:
  using DataError::DataError;
};

class NoObjectError : public DataError {
 public:
  using DataError::DataError;
};

class InvalidDepthError : public DataError {
 public:
  using DataError::DataError;
};

class EstimationFailure : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in a tensor, divergent loss, degenerate regression output.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ove6d
