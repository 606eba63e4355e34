#pragma once

#include <stdexcept>
#include <string>

namespace pauc {

/// Malformed input, invalid arguments, or violated preconditions.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or numerical breakdown during fitting/training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pauc
