#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mesa {

// Structural problems: mismatched tensor shapes, bad layer specs, etc.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values produced during training/evaluation. Carries the index of
// the offending batch element when known (SIZE_MAX otherwise).
struct NumericError : std::runtime_error {
  std::size_t batch_index;
  explicit NumericError(const std::string& what, std::size_t index = static_cast<std::size_t>(-1))
      : std::runtime_error(what), batch_index(index) {}
};

// Malformed or unreadable files (datasets, checkpoints, CSV inputs).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid experiment configuration: unknown keys, out-of-range values,
// inconsistent combinations.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mesa
