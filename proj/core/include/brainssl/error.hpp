#pragma once

#include <stdexcept>
#include <string>

namespace brainssl {

/// Base class for every error raised by the library. Callers that only need
/// a message can catch std::runtime_error; the subclasses let the CLI map
/// failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File missing, unreadable or unwritable.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed header, sidecar, manifest line or checkpoint.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A precondition on arguments or configuration does not hold.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input that is well formed but cannot be processed (constant volume,
/// single-class metric input, empty split).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// Non-finite activation or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Configuration document failed validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace brainssl
