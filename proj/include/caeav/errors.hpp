#pragma once

#include <stdexcept>
#include <string>

namespace caeav {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents or axis indices.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (even kernel, ratio out of range, unknown key...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward on a non-scalar root or on a consumed tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (empty caption, unnormalized distribution, bad file).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or file format does not match what this build expects.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// A loss or activation became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace caeav
