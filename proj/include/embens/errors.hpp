#pragma once

#include <stdexcept>
#include <string>

namespace embens {

/// Invalid user configuration (bad spec, malformed file, shape mismatch).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure: non-PSD matrices, divergence, non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An integrand produced a non-finite value on the quadrature grid.
class EvaluationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace embens
