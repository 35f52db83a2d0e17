#pragma once

#include <stdexcept>

namespace protoshot {

// Shape and argument violations are reported as std::invalid_argument.
// The types below separate the failure classes the CLI maps onto exit codes.

/// Malformed or inconsistent configuration (CLI exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unreadable, malformed or insufficient input data (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced during a forward pass or training (CLI exit code 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace protoshot
