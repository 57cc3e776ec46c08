#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

namespace embens {

enum class Activation { relu, identity, sigmoid, erf };

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::identity: return z;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::erf: return std::erf(z);
  }
  return 0.0;
}

/// Derivative; relu'(0) is taken as 0.
inline double activate_deriv(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
    case Activation::erf: return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-z * z);
  }
  return 0.0;
}

std::string to_string(Activation a);
Activation parse_activation(std::string_view name);

}  // namespace embens
