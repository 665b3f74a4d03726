#pragma once

#include <stdexcept>
#include <string>

namespace deesco {

/// Dimension/shape mismatch in a tensor operation.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Invalid configuration (bad geometry, bad hyperparameters, bad config file).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset or checkpoint file failed to parse or validate.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values surfaced where they must not propagate silently.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse (non-scalar backward target, mismatched subset keys, ...).
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace deesco
