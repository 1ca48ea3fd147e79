#pragma once

#include <stdexcept>
#include <string>

namespace spt {

// Invalid or inconsistent input data (bad panel, bad proximity structure).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical breakdown: singular systems, exponent overflow, degenerate weights.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OverflowError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace spt
