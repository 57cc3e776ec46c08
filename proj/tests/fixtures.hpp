#pragma once

// Random architectures and batches shared by unit and acceptance tests.

#include <random>

#include "embens/arch.hpp"
#include "embens/ensemble_net.hpp"

namespace fixture {

inline std::optional<embens::ModulationSpec> random_mod(std::mt19937_64& eng, bool allow_absent = true) {
  using embens::ModulationSpec;
  std::uniform_int_distribution<int> kind(allow_absent ? 0 : 1, 4);
  const bool trainable = std::bernoulli_distribution(0.5)(eng);
  switch (kind(eng)) {
    case 0: return std::nullopt;
    case 1: return ModulationSpec::deterministic(1.0, trainable);
    case 2: return ModulationSpec::gaussian(0.0, 1.0, trainable);
    case 3: return ModulationSpec::shifted(0.6, trainable);
    default: return ModulationSpec::ternary(0.7, trainable);
  }
}

/// L <= 3, widths <= 16, M <= 4, random modulations and activation.
inline embens::ArchSpec random_arch(std::mt19937_64& eng, embens::Parametrization param, int output_dim) {
  using namespace embens;
  std::uniform_int_distribution<int> depth(1, 3), width(2, 16), models(1, 4), in(1, 4), act(0, 3);
  ArchSpec a;
  a.input_dim = in(eng);
  a.output_dim = output_dim;
  a.n_models = models(eng);
  a.parametrization = param;
  const Activation acts[] = {Activation::relu, Activation::sigmoid, Activation::erf, Activation::identity};
  a.activation = acts[act(eng)];
  const int l = depth(eng);
  for (int i = 0; i < l; ++i) a.layers.push_back({width(eng), random_mod(eng), random_mod(eng)});
  if (std::bernoulli_distribution(0.3)(eng)) a.input_mod = random_mod(eng, false);
  if (std::bernoulli_distribution(0.3)(eng)) a.output_mod = random_mod(eng, false);
  a.validate();
  return a;
}

inline embens::Batch random_batch(std::mt19937_64& eng, const embens::ArchSpec& a, int rows, embens::LossKind kind) {
  std::normal_distribution<double> nd;
  embens::Batch b;
  b.inputs.resize(rows, a.input_dim);
  for (Eigen::Index i = 0; i < b.inputs.size(); ++i) b.inputs.data()[i] = nd(eng);
  if (kind == embens::LossKind::mse) {
    b.targets.resize(rows, a.output_dim);
    for (Eigen::Index i = 0; i < b.targets.size(); ++i) b.targets.data()[i] = nd(eng);
  } else {
    std::uniform_int_distribution<int> c(0, a.output_dim - 1);
    for (int r = 0; r < rows; ++r) b.labels.push_back(c(eng));
  }
  return b;
}

}  // namespace fixture

#include "oracles.hpp"

namespace fixture {

struct GradCheck {
  long checked = 0;
  long failures = 0;
  double worst = 0.0;  // largest |g - fd| / max(|fd|, floor)
};

/// Compares every analytic coordinate of every model's gradient with a
/// central difference of that model's loss. Coordinates with |fd| below
/// `floor` are judged on absolute error rel_tol * floor.
inline GradCheck check_gradients(const embens::EnsembleParams& params, const embens::ArchSpec& arch,
                                 const embens::Batch& batch, embens::LossKind kind, double rel_tol = 1e-5,
                                 double floor = 1e-4) {
  const embens::Gradients g = embens::grads(params, arch, batch, kind);
  embens::EnsembleParams p = params;
  GradCheck out;
  for (int alpha = 0; alpha < arch.n_models; ++alpha) {
    const auto& mg = g.models[alpha];
    oracle::for_each_param(p, arch, [&](double& coord, int model, const char* tag, int layer) {
      if (model != -1 && model != alpha) return;
      double analytic = 0.0;
      if (tag[0] == 'W') {
        const Eigen::MatrixXd& w = p.weights[layer - 1];
        const Eigen::Index k = &coord - w.data();
        analytic = mg.weights[layer - 1].data()[k];
      } else if (tag[0] == 'u') {
        const Eigen::Index j = (&coord - p.post[layer].data()) / p.post[layer].rows();
        analytic = (*mg.post[layer])[j];
      } else {
        const Eigen::Index j = (&coord - p.pre[layer].data()) / p.pre[layer].rows();
        analytic = (*mg.pre[layer])[j];
      }
      const double num = oracle::fd(p, arch, coord, alpha, batch, kind);
      const double err = std::abs(analytic - num) / std::max(std::abs(num), floor);
      out.worst = std::max(out.worst, err);
      ++out.checked;
      if (err > rel_tol) ++out.failures;
    });
  }
  return out;
}

}  // namespace fixture
