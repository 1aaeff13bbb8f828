#pragma once

#include <stdexcept>
#include <string>

namespace dsts {

// Base for every error raised by the library. Subclasses map onto the
// failure categories callers are expected to distinguish.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed argument: wrong shape, out-of-range label, empty input.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration: batch too small, non-positive output dims.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Internal consistency violated (partition overlap, checkpoint/model mismatch).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values detected during training or in debug checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsts
