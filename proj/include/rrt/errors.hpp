#pragma once

#include <stdexcept>
#include <string>

namespace rrt {

/// Invalid numeric argument or configuration value (CLI exit code 2).
struct value_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Tensor / layer shape mismatch.
struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed file, bad format, or failed I/O (CLI exit code 4).
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite loss during training (CLI exit code 3).
struct divergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rrt
