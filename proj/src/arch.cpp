#include "embens/arch.hpp"

#include <cmath>
#include <numeric>

namespace embens {

using nlohmann::json;

ModulationSpec ModulationSpec::deterministic(double c, bool trainable) {
  ModulationSpec m;
  m.kind = Kind::deterministic;
  m.mean = c;
  m.trainable = trainable;
  return m;
}

ModulationSpec ModulationSpec::gaussian(double mean, double variance, bool trainable) {
  ModulationSpec m;
  m.kind = Kind::gaussian;
  m.mean = mean;
  m.variance = variance;
  m.trainable = trainable;
  return m;
}

ModulationSpec ModulationSpec::shifted(double p, bool trainable) {
  return gaussian(p, std::max(0.0, 1.0 - p * p), trainable);
}

ModulationSpec ModulationSpec::discrete(std::vector<double> values, std::vector<double> probs, bool trainable) {
  ModulationSpec m;
  m.kind = Kind::discrete;
  m.values = std::move(values);
  m.probs = std::move(probs);
  m.trainable = trainable;
  return m;
}

ModulationSpec ModulationSpec::ternary(double q, bool trainable) {
  return discrete({-1.0, 0.0, 1.0}, {q / 2.0, 1.0 - q, q / 2.0}, trainable);
}

ModulationSpec ModulationSpec::bernoulli(double keep, bool trainable) {
  return discrete({0.0, 1.0}, {1.0 - keep, keep}, trainable);
}

void ModulationSpec::validate() const {
  switch (kind) {
    case Kind::deterministic:
      if (!std::isfinite(mean)) throw ConfigError("modulation: deterministic value must be finite");
      break;
    case Kind::gaussian:
      if (!std::isfinite(mean) || !(variance >= 0.0) || !std::isfinite(variance)) {
        throw ConfigError("modulation: gaussian needs finite mean and variance >= 0");
      }
      break;
    case Kind::discrete: {
      if (values.empty() || values.size() != probs.size()) {
        throw ConfigError("modulation: discrete values/probs must be nonempty and of equal length");
      }
      double total = 0.0;
      for (double p : probs) {
        if (!(p >= 0.0)) throw ConfigError("modulation: discrete probabilities must be nonnegative");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw ConfigError("modulation: discrete probabilities must sum to 1");
      break;
    }
  }
}

double ModulationSpec::sample(Rng& rng) const {
  switch (kind) {
    case Kind::deterministic: return mean;
    case Kind::gaussian: return variance > 0.0 ? mean + std::sqrt(variance) * rng.normal() : mean;
    case Kind::discrete: {
      const double u = rng.uniform();
      double cum = 0.0;
      for (std::size_t k = 0; k < values.size(); ++k) {
        cum += probs[k];
        if (u < cum) return values[k];
      }
      // Rounding left u above the final cumulative sum.
      for (std::size_t k = values.size(); k-- > 0;) {
        if (probs[k] > 0.0) return values[k];
      }
      return values.back();
    }
  }
  return mean;
}

bool ModulationSpec::is_constant() const {
  switch (kind) {
    case Kind::deterministic: return true;
    case Kind::gaussian: return variance == 0.0;
    case Kind::discrete: {
      int support = 0;
      for (double p : probs) support += p > 0.0 ? 1 : 0;
      return support <= 1;
    }
  }
  return false;
}

int ArchSpec::width(int l) const {
  if (l == 0) return input_dim;
  if (l == depth() + 1) return output_dim;
  if (l < 0 || l > depth() + 1) throw ConfigError("ArchSpec::width: layer index out of range");
  return layers[l - 1].width;
}

void ArchSpec::validate() const {
  if (input_dim < 1) throw ConfigError("arch: input_dim must be >= 1");
  if (output_dim < 1) throw ConfigError("arch: output_dim must be >= 1");
  if (n_models < 1) throw ConfigError("arch: n_models must be >= 1");
  for (const auto& l : layers) {
    if (l.width < 1) throw ConfigError("arch: layer widths must be >= 1");
    if (l.pre_mod) l.pre_mod->validate();
    if (l.post_mod) l.post_mod->validate();
  }
  if (input_mod) input_mod->validate();
  if (output_mod) output_mod->validate();
}

long long ArchSpec::n_shared_params() const {
  long long n = 0;
  for (int l = 1; l <= depth() + 1; ++l) n += static_cast<long long>(width(l - 1)) * width(l);
  return n;
}

ArchSpec make_mlp(int input_dim, const std::vector<int>& widths, int output_dim, Activation act, int n_models,
                  std::optional<ModulationSpec> pre_mod, std::optional<ModulationSpec> post_mod) {
  ArchSpec a;
  a.input_dim = input_dim;
  a.output_dim = output_dim;
  a.activation = act;
  a.n_models = n_models;
  for (int w : widths) a.layers.push_back({w, pre_mod, post_mod});
  return a;
}

std::string to_string(Parametrization p) { return p == Parametrization::ntk ? "ntk" : "standard"; }

Parametrization parse_parametrization(const std::string& s) {
  if (s == "ntk") return Parametrization::ntk;
  if (s == "standard") return Parametrization::standard;
  throw ConfigError("unknown parametrization: " + s);
}

json to_json(const ModulationSpec& m) {
  json j;
  switch (m.kind) {
    case ModulationSpec::Kind::deterministic:
      j["kind"] = "deterministic";
      j["value"] = m.mean;
      break;
    case ModulationSpec::Kind::gaussian:
      j["kind"] = "gaussian";
      j["mean"] = m.mean;
      j["variance"] = m.variance;
      break;
    case ModulationSpec::Kind::discrete:
      j["kind"] = "discrete";
      j["values"] = m.values;
      j["probs"] = m.probs;
      break;
  }
  j["trainable"] = m.trainable;
  return j;
}

ModulationSpec modulation_from_json(const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const bool trainable = j.value("trainable", false);
    ModulationSpec m;
    if (kind == "deterministic") {
      m = ModulationSpec::deterministic(j.value("value", 1.0), trainable);
    } else if (kind == "gaussian") {
      m = ModulationSpec::gaussian(j.at("mean").get<double>(), j.at("variance").get<double>(), trainable);
    } else if (kind == "shifted") {
      m = ModulationSpec::shifted(j.at("p").get<double>(), trainable);
    } else if (kind == "discrete") {
      m = ModulationSpec::discrete(j.at("values").get<std::vector<double>>(),
                                   j.at("probs").get<std::vector<double>>(), trainable);
    } else if (kind == "ternary") {
      m = ModulationSpec::ternary(j.at("q").get<double>(), trainable);
    } else if (kind == "bernoulli") {
      m = ModulationSpec::bernoulli(j.at("keep").get<double>(), trainable);
    } else {
      throw ConfigError("unknown modulation kind: " + kind);
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("modulation spec: ") + e.what());
  }
}

namespace {

void put_optional(json& j, const char* key, const std::optional<ModulationSpec>& m) {
  if (m) j[key] = to_json(*m);
}

std::optional<ModulationSpec> get_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return modulation_from_json(j.at(key));
}

}  // namespace

json to_json(const ArchSpec& a) {
  json j;
  j["input_dim"] = a.input_dim;
  j["output_dim"] = a.output_dim;
  j["activation"] = to_string(a.activation);
  j["parametrization"] = to_string(a.parametrization);
  j["n_models"] = a.n_models;
  json layers = json::array();
  for (const auto& l : a.layers) {
    json lj;
    lj["width"] = l.width;
    put_optional(lj, "pre_mod", l.pre_mod);
    put_optional(lj, "post_mod", l.post_mod);
    layers.push_back(lj);
  }
  j["layers"] = layers;
  put_optional(j, "input_mod", a.input_mod);
  put_optional(j, "output_mod", a.output_mod);
  return j;
}

ArchSpec arch_from_json(const json& j) {
  try {
    ArchSpec a;
    a.input_dim = j.at("input_dim").get<int>();
    a.output_dim = j.value("output_dim", 1);
    a.activation = parse_activation(j.value("activation", std::string("relu")));
    a.parametrization = parse_parametrization(j.value("parametrization", std::string("ntk")));
    a.n_models = j.value("n_models", 1);
    for (const auto& lj : j.at("layers")) {
      if (lj.is_number_integer()) {
        a.layers.push_back({lj.get<int>(), std::nullopt, std::nullopt});
      } else {
        a.layers.push_back({lj.at("width").get<int>(), get_optional(lj, "pre_mod"), get_optional(lj, "post_mod")});
      }
    }
    a.input_mod = get_optional(j, "input_mod");
    a.output_mod = get_optional(j, "output_mod");
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("arch spec: ") + e.what());
  }
}

}  // namespace embens
