#pragma once

#include <stdexcept>
#include <string>

namespace scd2te {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape, range, ordering).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input data is unusable, e.g. non-finite pixel values.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// An operation was called on an object in the wrong state.
class InvalidState : public Error {
 public:
  using Error::Error;
};

/// A solver invariant was violated. Indicates a bug, not bad input.
class InternalError : public Error {
 public:
  using Error::Error;
};

/// A metric is mathematically undefined for the given masks.
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// A file could not be read or has an unsupported layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A model file failed magic, version, checksum or invariant validation.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// A text input (manifest, config) is malformed. line() is 1-based, 0 if unknown.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_ = 0;
};

}  // namespace scd2te
