#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "embens/activation.hpp"
#include "embens/numerics.hpp"

namespace embens {

/// Distribution of a per-neuron modulation (u or v) and whether it trains.
struct ModulationSpec {
  enum class Kind { deterministic, gaussian, discrete };

  Kind kind = Kind::deterministic;
  double mean = 1.0;      // deterministic value, or gaussian mean
  double variance = 0.0;  // gaussian only
  std::vector<double> values;
  std::vector<double> probs;
  bool trainable = false;

  static ModulationSpec deterministic(double c, bool trainable = false);
  static ModulationSpec gaussian(double mean, double variance, bool trainable = false);
  /// N(p, 1 - p^2): unit second moment, mean p.
  static ModulationSpec shifted(double p, bool trainable = false);
  static ModulationSpec discrete(std::vector<double> values, std::vector<double> probs, bool trainable = false);
  /// {-1, 0, 1} with probabilities {q/2, 1-q, q/2}.
  static ModulationSpec ternary(double q, bool trainable = false);
  /// {0, 1} with P(1) = keep.
  static ModulationSpec bernoulli(double keep, bool trainable = false);

  void validate() const;
  double sample(Rng& rng) const;
  /// True when every draw is the same number.
  bool is_constant() const;
};

enum class Parametrization { ntk, standard };

struct LayerSpec {
  int width = 1;
  std::optional<ModulationSpec> pre_mod;   // v^l, inside the activation
  std::optional<ModulationSpec> post_mod;  // u^l, after the activation
};

/// Fully-connected embedded ensemble without biases.
struct ArchSpec {
  int input_dim = 1;
  std::vector<LayerSpec> layers;  // hidden layers 1..L, possibly none
  int output_dim = 1;
  Activation activation = Activation::relu;
  Parametrization parametrization = Parametrization::ntk;
  int n_models = 1;
  std::optional<ModulationSpec> input_mod;   // u^0 on raw inputs
  std::optional<ModulationSpec> output_mod;  // v^{L+1} on outputs

  int depth() const { return static_cast<int>(layers.size()); }
  /// N_l for l = 0..L+1.
  int width(int l) const;
  void validate() const;
  /// Number of shared weights.
  long long n_shared_params() const;
};

/// Hidden layers of the given widths, each with the same optional pre/post
/// modulation spec.
ArchSpec make_mlp(int input_dim, const std::vector<int>& widths, int output_dim, Activation act, int n_models,
                  std::optional<ModulationSpec> pre_mod, std::optional<ModulationSpec> post_mod);

nlohmann::json to_json(const ModulationSpec& m);
ModulationSpec modulation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);

std::string to_string(Parametrization p);
Parametrization parse_parametrization(const std::string& s);

}  // namespace embens
