#pragma once

#include <stdexcept>
#include <string>

namespace spill {

// Bad inputs: malformed files, broken invariants, impossible configurations.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during estimation (divergence, undefined ratios that
// cannot be excluded, non-converging sampling scales).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spill
