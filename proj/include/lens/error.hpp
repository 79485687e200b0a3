#pragma once

#include <stdexcept>
#include <string>

namespace lens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad dimension, nonpositive size, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed (non-PSD kernel, singular covariance, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed input. `line` is the 1-based CSV line or JSON record number, 0 when unknown.
class ParseError : public InvalidArgument {
 public:
  ParseError(const std::string& what, std::size_t line) : InvalidArgument(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A file could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lens
