#include "embens/kernel_theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace embens {

using Eigen::MatrixXd;

ModulationMoments moments(const ModulationSpec& spec) {
  spec.validate();
  ModulationMoments m;
  m.trainable = spec.trainable;
  switch (spec.kind) {
    case ModulationSpec::Kind::deterministic:
      m.m1 = spec.mean;
      m.m2 = spec.mean * spec.mean;
      break;
    case ModulationSpec::Kind::gaussian:
      m.m1 = spec.mean;
      m.m2 = spec.variance + spec.mean * spec.mean;
      break;
    case ModulationSpec::Kind::discrete:
      m.m1 = 0.0;
      m.m2 = 0.0;
      for (std::size_t k = 0; k < spec.values.size(); ++k) {
        m.m1 += spec.probs[k] * spec.values[k];
        m.m2 += spec.probs[k] * spec.values[k] * spec.values[k];
      }
      break;
  }
  return m;
}

ModulationMoments moments(const std::optional<ModulationSpec>& spec) {
  return spec ? moments(*spec) : ModulationMoments{};
}

namespace {

struct ModRule {
  std::vector<double> v;
  std::vector<double> w;
};

ModRule modulation_rule(const ModulationSpec& s, int n) {
  ModRule r;
  switch (s.kind) {
    case ModulationSpec::Kind::deterministic:
      r.v = {s.mean};
      r.w = {1.0};
      break;
    case ModulationSpec::Kind::gaussian:
      if (s.variance == 0.0) {
        r.v = {s.mean};
        r.w = {1.0};
      } else {
        const QuadratureRule& gh = gauss_hermite(n);
        const double sd = std::sqrt(s.variance);
        for (std::size_t k = 0; k < gh.nodes.size(); ++k) {
          r.v.push_back(s.mean + sd * gh.nodes[k]);
          r.w.push_back(gh.weights[k]);
        }
      }
      break;
    case ModulationSpec::Kind::discrete:
      for (std::size_t k = 0; k < s.values.size(); ++k) {
        if (s.probs[k] > 0.0) {
          r.v.push_back(s.values[k]);
          r.w.push_back(s.probs[k]);
        }
      }
      break;
  }
  return r;
}

// ReLU is positively homogeneous, so relu(v z) = |v| relu(sign(v) z). Per
// sign, one atom matching the moment of the right degree is then exact:
// degree 2 (and 0) for products sharing one draw, degree 1 (and 0) for a
// single averaged argument.
ModRule relu_sign_rule(const ModulationSpec& s, PairMode mode) {
  const double sd = std::sqrt(s.variance);
  const double a = s.mean / sd;
  const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
  ModRule r;
  for (double sign : {1.0, -1.0}) {
    const double prob = 0.5 * std::erfc(-sign * a / std::sqrt(2.0));
    if (prob <= 0.0) continue;
    double value;
    if (mode == PairMode::same_model) {
      const double m2 = (s.mean * s.mean + s.variance) * prob + sign * s.mean * sd * pdf;
      value = sign * std::sqrt(std::max(0.0, m2) / prob);
    } else {
      value = (s.mean * prob + sign * sd * pdf) / prob;
    }
    r.v.push_back(value);
    r.w.push_back(prob);
  }
  return r;
}

// phi(vz), phi'(vz), v phi'(vz), z phi'(vz) at one point.
struct Terms {
  double a, d, vd, zd;
};

Terms terms(Activation act, double v, double z) {
  const double d = activate_deriv(act, v * z);
  return {activate(act, v * z), d, v * d, z * d};
}

void check_finite(const PairExpectations& e) {
  if (!std::isfinite(e.phi) || !std::isfinite(e.phid) || !std::isfinite(e.vphid) || !std::isfinite(e.phiz)) {
    throw EvaluationError("pair_expectations: non-finite integrand");
  }
}

PairExpectations relu_closed_form(const Cov2& c, double v) {
  PairExpectations e;
  if (v == 0.0 || c.s11 <= 0.0 || c.s22 <= 0.0) return e;
  const double norm = std::sqrt(c.s11 * c.s22);
  const double rho = std::clamp(c.s12 / norm, -1.0 + 1e-12, 1.0 - 1e-12);
  const double theta = std::acos(rho);
  const double k0 = (std::numbers::pi - theta) / (2.0 * std::numbers::pi);
  const double k1 = norm * (std::sin(theta) + (std::numbers::pi - theta) * rho) / (2.0 * std::numbers::pi);
  e.phi = v * v * k1;
  e.phid = k0;
  e.vphid = v * v * k0;
  e.phiz = k1;
  return e;
}

}  // namespace

PairExpectations pair_expectations(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode,
                                   const KernelOptions& opt) {
  check_psd(c);
  const bool relu = act == Activation::relu;
  const ModRule rule = relu && v.kind == ModulationSpec::Kind::gaussian && v.variance > 0.0
                           ? relu_sign_rule(v, mode)
                           : modulation_rule(v, opt.quad.nodes_per_dim);
  if (opt.relu_closed_form && relu && v.is_constant()) return relu_closed_form(c, rule.v[0]);
  const std::vector<GridPoint> grid = relu ? kinked_grid(c, opt.quad) : bivariate_grid(c, opt.quad);
  PairExpectations e;
  if (rule.v.size() == 1 || mode == PairMode::same_model) {
    for (std::size_t k = 0; k < rule.v.size(); ++k) {
      PairExpectations part;
      for (const auto& p : grid) {
        const Terms t1 = terms(act, rule.v[k], p.z1);
        const Terms t2 = terms(act, rule.v[k], p.z2);
        part.phi += p.w * t1.a * t2.a;
        part.phid += p.w * t1.d * t2.d;
        part.vphid += p.w * t1.vd * t2.vd;
        part.phiz += p.w * t1.zd * t2.zd;
      }
      e.phi += rule.w[k] * part.phi;
      e.phid += rule.w[k] * part.phid;
      e.vphid += rule.w[k] * part.vphid;
      e.phiz += rule.w[k] * part.phiz;
    }
  } else {
    // Independent draws: average each argument over v first.
    auto averaged = [&](double z) {
      Terms acc{0.0, 0.0, 0.0, 0.0};
      for (std::size_t k = 0; k < rule.v.size(); ++k) {
        const Terms t = terms(act, rule.v[k], z);
        acc.a += rule.w[k] * t.a;
        acc.d += rule.w[k] * t.d;
        acc.vd += rule.w[k] * t.vd;
        acc.zd += rule.w[k] * t.zd;
      }
      return acc;
    };
    for (const auto& p : grid) {
      const Terms t1 = averaged(p.z1);
      const Terms t2 = averaged(p.z2);
      e.phi += p.w * t1.a * t2.a;
      e.phid += p.w * t1.d * t2.d;
      e.vphid += p.w * t1.vd * t2.vd;
      e.phiz += p.w * t1.zd * t2.zd;
    }
  }
  check_finite(e);
  return e;
}

double phi_expect(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode, const QuadratureSpec& q) {
  return pair_expectations(act, c, v, mode, {q}).phi;
}

double phid_expect(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode, const QuadratureSpec& q) {
  return pair_expectations(act, c, v, mode, {q}).phid;
}

double phiz_expect(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode, const QuadratureSpec& q) {
  return pair_expectations(act, c, v, mode, {q}).phiz;
}

LayerKernels sigma_init(const MatrixXd& inputs, int n0) {
  if (inputs.cols() != n0) throw ConfigError("sigma_init: inputs must have N0 columns");
  LayerKernels k;
  k.sigma_same = inputs * inputs.transpose() / static_cast<double>(n0);
  k.sigma_diff = k.sigma_same;
  k.theta_com_same = k.sigma_same;
  k.theta_com_diff = k.sigma_same;
  k.theta_ind_same = MatrixXd::Zero(k.sigma_same.rows(), k.sigma_same.cols());
  return k;
}

namespace {

LayerKernels step(const LayerKernels& prev, const ModulationMoments& u, const ModulationMoments& v_mom,
                  const ModulationSpec& v, Activation act, bool train_u, bool train_v, bool with_ntk,
                  const KernelOptions& opt) {
  const Eigen::Index n = prev.n();
  LayerKernels k;
  k.sigma_same.resize(n, n);
  k.sigma_diff.resize(n, n);
  if (with_ntk) {
    k.theta_com_same.resize(n, n);
    k.theta_com_diff.resize(n, n);
    k.theta_ind_same.resize(n, n);
  }
  const double u2 = u.m2;
  const double u1sq = u.m1 * u.m1;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const Cov2 cs{prev.sigma_same(i, i), prev.sigma_same(i, j), prev.sigma_same(j, j)};
      const Cov2 cd{prev.sigma_same(i, i), prev.sigma_diff(i, j), prev.sigma_same(j, j)};
      const PairExpectations es = pair_expectations(act, cs, v, PairMode::same_model, opt);
      const PairExpectations ed = pair_expectations(act, cd, v, PairMode::diff_model, opt);
      k.sigma_same(i, j) = k.sigma_same(j, i) = u2 * es.phi;
      k.sigma_diff(i, j) = k.sigma_diff(j, i) = u1sq * ed.phi;
      if (!with_ntk) continue;
      const double ms = opt.factorize_premod ? u2 * v_mom.m2 * es.phid : u2 * es.vphid;
      const double md = opt.factorize_premod ? u1sq * v_mom.m1 * v_mom.m1 * ed.phid : u1sq * ed.vphid;
      k.theta_com_same(i, j) = k.theta_com_same(j, i) = ms * prev.theta_com_same(i, j) + u2 * es.phi;
      k.theta_com_diff(i, j) = k.theta_com_diff(j, i) = md * prev.theta_com_diff(i, j) + u1sq * ed.phi;
      const double fresh = (train_u ? es.phi : 0.0) + (train_v ? u2 * es.phiz : 0.0);
      k.theta_ind_same(i, j) = k.theta_ind_same(j, i) = ms * prev.theta_ind_same(i, j) + fresh;
    }
  }
  return k;
}

void check_assembled_psd(const MatrixXd& m, const char* what) {
  const double trace = m.trace();
  const double tol = 1e-8 * std::max(trace, 0.0) / static_cast<double>(std::max<Eigen::Index>(m.rows(), 1));
  const double lo = min_eigenvalue(m);
  if (lo < -tol) {
    throw NumericalError(std::string(what) + ": not PSD (min eigenvalue " + std::to_string(lo) + ")");
  }
}

}  // namespace

LayerKernels sigma_step(const LayerKernels& prev, const ModulationMoments& u, const ModulationSpec& v, Activation act,
                        const KernelOptions& opt) {
  return step(prev, u, moments(v), v, act, false, false, false, opt);
}

LayerKernels ntk_step(const LayerKernels& prev, const ModulationMoments& u, const ModulationMoments& v_mom,
                      const ModulationSpec& v, Activation act, bool train_u, bool train_v, const KernelOptions& opt) {
  return step(prev, u, v_mom, v, act, train_u, train_v, true, opt);
}

std::vector<LayerKernels> run_recursion(const ArchSpec& arch, const MatrixXd& inputs, const KernelOptions& opt) {
  arch.validate();
  if (arch.input_mod) throw ConfigError("run_recursion: input modulation is not covered by the recursion");
  if (arch.output_mod) throw ConfigError("run_recursion: output modulation is not covered by the recursion");
  if (arch.parametrization != Parametrization::ntk) {
    throw ConfigError("run_recursion: the recursion assumes ntk parametrization");
  }
  std::vector<LayerKernels> out;
  out.push_back(sigma_init(inputs, arch.input_dim));
  const ModulationSpec unit = ModulationSpec::deterministic(1.0);
  for (int l = 1; l <= arch.depth(); ++l) {
    const LayerSpec& layer = arch.layers[l - 1];
    const ModulationSpec& v = layer.pre_mod ? *layer.pre_mod : unit;
    const ModulationMoments u = moments(layer.post_mod);
    const ModulationMoments vm = moments(layer.pre_mod);
    out.push_back(ntk_step(out.back(), u, vm, v, arch.activation, u.trainable, vm.trainable, opt));
  }
  return out;
}

MatrixXd theta_same_total(const LayerKernels& k, int n_models, GammaMode mode, double gamma_value) {
  const double g = gamma_factor(mode, gamma_value, n_models) / n_models;
  return g * k.theta_com_same + k.theta_ind_same;
}

MatrixXd assemble_ntk(const LayerKernels& k, int n_models, GammaMode mode, double gamma_value) {
  if (n_models < 1) throw ConfigError("assemble_ntk: n_models must be >= 1");
  const Eigen::Index n = k.n();
  const double g = gamma_factor(mode, gamma_value, n_models) / n_models;
  const MatrixXd diag = g * k.theta_com_same + k.theta_ind_same;
  const MatrixXd off = g * k.theta_com_diff;
  MatrixXd out(n_models * n, n_models * n);
  for (int a = 0; a < n_models; ++a) {
    for (int b = 0; b < n_models; ++b) out.block(a * n, b * n, n, n) = a == b ? diag : off;
  }
  check_assembled_psd(out, "assemble_ntk");
  return out;
}

MatrixXd gp_covariance_blocks(const LayerKernels& k, int n_models) {
  if (n_models < 1) throw ConfigError("gp_covariance_blocks: n_models must be >= 1");
  const Eigen::Index n = k.n();
  MatrixXd out(n_models * n, n_models * n);
  for (int a = 0; a < n_models; ++a) {
    for (int b = 0; b < n_models; ++b) out.block(a * n, b * n, n, n) = a == b ? k.sigma_same : k.sigma_diff;
  }
  check_assembled_psd(out, "gp_covariance_blocks");
  return out;
}

}  // namespace embens
