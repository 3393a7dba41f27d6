#pragma once

#include <stdexcept>
#include <string>

namespace eqinv {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed a value outside the operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A configuration value or combination is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An input file does not follow its documented layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed, including truncated input.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class VersionMismatchError : public Error {
 public:
  using Error::Error;
};

/// Stored tensor shapes disagree with the requested configuration.
class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace eqinv
