#include "embens/activation.hpp"

#include "embens/errors.hpp"

namespace embens {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::erf: return "erf";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "erf") return Activation::erf;
  throw ConfigError("unknown activation: " + std::string(name));
}

}  // namespace embens
