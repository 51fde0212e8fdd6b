#pragma once

#include <stdexcept>
#include <string>

namespace lsn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or grid shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid model / experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numeric input outside the domain of the operation (NaN, Inf, empty).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// More groundtruth items than prediction slots.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk file. The message carries the path and byte offset.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A file the dataset manifest promises is missing.
class InventoryError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

/// Inputs that do not line up (scene IDs, config hashes).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace lsn
