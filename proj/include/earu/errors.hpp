#pragma once

#include <stdexcept>
#include <string>

namespace earu {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or volume dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar argument (probability, weight, threshold...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state (e.g. backward after an
/// inference-mode forward, optimizer keys that do not match).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Input data violates an operation precondition (empty mask, bad range).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Degenerate batch statistics (variance undefined).
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given inputs (empty surface, |A| = 0).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// File encodings that are recognised but not supported (big-endian NIfTI,
/// unknown datatype codes).
class UnsupportedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace earu
