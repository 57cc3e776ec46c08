#include "embens/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace embens {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Per-row output gradients stacked over (model, point, class) rows.
struct RowFeatures {
  std::vector<MatrixXd> x;      // [l-1]: R x N_{l-1}, input to W^l
  std::vector<MatrixXd> delta;  // [l-1]: R x N_l, d f / d z^l
  MatrixXd mod;                 // R x (trainable modulation coordinates)
  std::vector<int> model;
};

int modulation_dim(const ArchSpec& arch) {
  int d = 0;
  for (int l = 0; l <= arch.depth(); ++l) d += post_trainable(arch, l) ? arch.width(l) : 0;
  for (int l = 1; l <= arch.depth() + 1; ++l) d += pre_trainable(arch, l) ? arch.width(l) : 0;
  return d;
}

// Row for (alpha, point a, class slot ci) is given by `index`.
template <class Index>
RowFeatures row_features(const EnsembleParams& params, const ArchSpec& arch, const MatrixXd& inputs,
                         const std::vector<int>& classes, Index index) {
  const int m = params.n_models();
  const int n = static_cast<int>(inputs.rows());
  const int depth = arch.depth();
  const int rows = m * n * static_cast<int>(classes.size());
  RowFeatures f;
  for (int l = 1; l <= depth + 1; ++l) {
    f.x.emplace_back(rows, arch.width(l - 1));
    f.delta.emplace_back(rows, arch.width(l));
  }
  f.mod.resize(rows, modulation_dim(arch));
  f.model.resize(rows);
  for (int alpha = 0; alpha < m; ++alpha) {
    const ModelTape tape = forward_model(params, arch, alpha, inputs);
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
      const int c = classes[ci];
      if (c < 0 || c >= arch.output_dim) throw ConfigError("NTK: output channel out of range");
      MatrixXd seed = MatrixXd::Zero(n, arch.output_dim);
      seed.col(c).setOnes();
      const RowGrads rg = backward_model(params, arch, alpha, tape, seed);
      for (int a = 0; a < n; ++a) {
        const int r = index(alpha, a, static_cast<int>(ci));
        f.model[r] = alpha;
        for (int l = 1; l <= depth + 1; ++l) {
          f.x[l - 1].row(r) = tape.x[l - 1].row(a);
          f.delta[l - 1].row(r) = rg.delta[l].row(a);
        }
        Eigen::Index off = 0;
        for (int l = 0; l <= depth; ++l) {
          if (!post_trainable(arch, l)) continue;
          f.mod.row(r).segment(off, arch.width(l)) = rg.d_post[l].row(a);
          off += arch.width(l);
        }
        for (int l = 1; l <= depth + 1; ++l) {
          if (!pre_trainable(arch, l)) continue;
          f.mod.row(r).segment(off, arch.width(l)) = rg.d_pre[l].row(a);
          off += arch.width(l);
        }
      }
    }
  }
  return f;
}

void gram(const RowFeatures& f, const ArchSpec& arch, MatrixXd& common, MatrixXd& individual) {
  const Eigen::Index rows = static_cast<Eigen::Index>(f.model.size());
  common = MatrixXd::Zero(rows, rows);
  for (std::size_t l = 0; l < f.x.size(); ++l) {
    const double s = layer_scale(arch, static_cast<int>(l) + 1);
    const MatrixXd gx = f.x[l] * f.x[l].transpose();
    const MatrixXd gd = f.delta[l] * f.delta[l].transpose();
    common += (s * s) * gx.cwiseProduct(gd);
  }
  individual = f.mod.cols() > 0 ? MatrixXd(f.mod * f.mod.transpose()) : MatrixXd::Zero(rows, rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < rows; ++j) {
      if (f.model[i] != f.model[j]) individual(i, j) = 0.0;
    }
  }
}

}  // namespace

EmpiricalKernel empirical_ntk(const EnsembleParams& params, const ArchSpec& arch, const MatrixXd& inputs,
                              GammaMode mode, double gamma_value, int channel) {
  const int n = static_cast<int>(inputs.rows());
  const RowFeatures f =
      row_features(params, arch, inputs, {channel}, [n](int alpha, int a, int) { return alpha * n + a; });
  EmpiricalKernel k;
  k.n_models = params.n_models();
  k.n_points = n;
  k.gamma_mode = mode;
  gram(f, arch, k.common, k.individual);
  k.values = (gamma_factor(mode, gamma_value, k.n_models) / k.n_models) * k.common + k.individual;
  return k;
}

ClassNtk class_ntk(const EnsembleParams& params, const ArchSpec& arch, const MatrixXd& inputs, GammaMode mode,
                   double gamma_value) {
  const int n = static_cast<int>(inputs.rows());
  const int c = arch.output_dim;
  std::vector<int> classes(c);
  std::iota(classes.begin(), classes.end(), 0);
  const RowFeatures f = row_features(params, arch, inputs, classes,
                                     [n, c](int alpha, int a, int i) { return (alpha * n + a) * c + i; });
  ClassNtk k;
  k.n_models = params.n_models();
  k.n_points = n;
  k.n_classes = c;
  MatrixXd common, individual;
  gram(f, arch, common, individual);
  k.values = (gamma_factor(mode, gamma_value, k.n_models) / k.n_models) * common + individual;
  return k;
}

MatrixXd ntk_reduce_nll(const ClassNtk& k, const std::vector<MatrixXd>& probs, const std::vector<int>& labels) {
  const int m = k.n_models, n = k.n_points, c = k.n_classes;
  if (static_cast<int>(probs.size()) != m || static_cast<int>(labels.size()) != n) {
    throw ConfigError("ntk_reduce_nll: probs/labels do not match the kernel");
  }
  // G: (M B) x (M B C) block rows of CE output gradients.
  MatrixXd g = MatrixXd::Zero(m * n, m * n * c);
  for (int alpha = 0; alpha < m; ++alpha) {
    if (probs[alpha].rows() != n || probs[alpha].cols() != c) throw ConfigError("ntk_reduce_nll: probs shape");
    for (int a = 0; a < n; ++a) {
      for (int i = 0; i < c; ++i) {
        g(alpha * n + a, (alpha * n + a) * c + i) = probs[alpha](a, i) - (labels[a] == i ? 1.0 : 0.0);
      }
    }
  }
  return g * k.values * g.transpose();
}

MatrixXd ntk_reduce_target(const ClassNtk& k, const std::vector<int>& labels) {
  const int m = k.n_models, n = k.n_points, c = k.n_classes;
  if (static_cast<int>(labels.size()) != n) throw ConfigError("ntk_reduce_target: need one label per point");
  MatrixXd out(m * n, m * n);
  for (int alpha = 0; alpha < m; ++alpha) {
    for (int a = 0; a < n; ++a) {
      if (labels[a] < 0 || labels[a] >= c) throw ConfigError("ntk_reduce_target: label out of range");
      for (int beta = 0; beta < m; ++beta) {
        for (int b = 0; b < n; ++b) out(alpha * n + a, beta * n + b) = k.at(labels[a], labels[b], alpha, beta, a, b);
      }
    }
  }
  return out;
}

InteractionMetrics interaction_metrics(const MatrixXd& reduced, int n_models, int m, Seed seed) {
  if (!(n_models > m && m >= 1)) throw ConfigError("interaction_metrics: need M > m >= 1");
  if (reduced.rows() != reduced.cols() || reduced.rows() % n_models != 0) {
    throw ConfigError("interaction_metrics: kernel shape does not match M");
  }
  const Eigen::Index n = reduced.rows() / n_models;
  double off = 0.0, diag = 0.0;
  for (int a = 0; a < n_models; ++a) {
    for (int b = 0; b < n_models; ++b) {
      const double sq = reduced.block(a * n, b * n, n, n).squaredNorm();
      (a == b ? diag : off) += sq;
    }
  }
  const double n_off = static_cast<double>(n_models) * (n_models - 1);
  if (diag == 0.0) throw NumericalError("interaction_metrics: zero denominator");
  InteractionMetrics r;
  r.offdiag_ratio = (off / n_off) / (diag / n_models);

  std::vector<int> order(n_models);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  double num = 0.0, den = 0.0;
  for (int alpha = 0; alpha < n_models; ++alpha) {
    std::vector<int> subset;
    for (int b : order) {
      if (static_cast<int>(subset.size()) == m) break;
      if (b != alpha) subset.push_back(b);
    }
    for (Eigen::Index a = 0; a < n; ++a) {
      double s = 0.0;
      for (int beta : subset) s += reduced.row(alpha * n + a).segment(beta * n, n).sum();
      const double d = reduced.row(alpha * n + a).segment(alpha * n, n).sum();
      num += (s / n) * (s / n);
      den += (d / n) * (d / n);
    }
  }
  if (den == 0.0) throw NumericalError("interaction_metrics: zero denominator");
  r.coherent_ratio = num / den;
  return r;
}

double ntk_drift(const EnsembleParams& params_t, const EnsembleParams& params_0, const ArchSpec& arch,
                 const MatrixXd& inputs, GammaMode mode, double gamma_value) {
  const MatrixXd k0 = empirical_ntk(params_0, arch, inputs, mode, gamma_value).values;
  const MatrixXd kt = empirical_ntk(params_t, arch, inputs, mode, gamma_value).values;
  const double norm0 = k0.norm();
  if (norm0 == 0.0) throw NumericalError("ntk_drift: initial kernel is zero");
  return (kt - k0).norm() / norm0;
}

EmpiricalCovariance empirical_covariance(const ArchSpec& arch, const MatrixXd& inputs, int n_seeds, Seed seed,
                                         int channel) {
  if (n_seeds < 2) throw ConfigError("empirical_covariance: need at least 2 seeds");
  if (channel < 0 || channel >= arch.output_dim) throw ConfigError("empirical_covariance: channel out of range");
  const int m = arch.n_models;
  const Eigen::Index n = inputs.rows();
  MatrixXd s_sum = MatrixXd::Zero(n, n), s_sq = MatrixXd::Zero(n, n);
  MatrixXd d_sum = MatrixXd::Zero(n, n), d_sq = MatrixXd::Zero(n, n);
  for (int s = 0; s < n_seeds; ++s) {
    const EnsembleParams p = init_params(arch, split_rng(seed, static_cast<std::uint64_t>(s)));
    MatrixXd f(m, n);
    for (int alpha = 0; alpha < m; ++alpha) f.row(alpha) = forward_model(p, arch, alpha, inputs).out.col(channel);
    const MatrixXd outer = f.transpose() * f;  // sum over alpha of f_alpha f_alpha^T
    const MatrixXd same = outer / m;
    s_sum += same;
    s_sq += same.cwiseProduct(same);
    if (m >= 2) {
      const Eigen::RowVectorXd tot = f.colwise().sum();
      const MatrixXd diff = (tot.transpose() * tot - outer) / (static_cast<double>(m) * (m - 1));
      d_sum += diff;
      d_sq += diff.cwiseProduct(diff);
    }
  }
  const double ns = n_seeds;
  auto stderr_of = [ns](const MatrixXd& sum, const MatrixXd& sq) {
    const MatrixXd mean = sum / ns;
    const MatrixXd var = ((sq / ns - mean.cwiseProduct(mean)) * (ns / (ns - 1.0))).cwiseMax(0.0);
    return MatrixXd((var / ns).cwiseSqrt());
  };
  EmpiricalCovariance c;
  c.n_seeds = n_seeds;
  c.same = s_sum / ns;
  c.same_stderr = stderr_of(s_sum, s_sq);
  if (m >= 2) {
    c.diff = d_sum / ns;
    c.diff_stderr = stderr_of(d_sum, d_sq);
  }
  return c;
}

std::vector<VectorXd> flat_weight_grads(const Gradients& g) {
  std::vector<VectorXd> out;
  for (const auto& mg : g.models) {
    Eigen::Index total = 0;
    for (const auto& w : mg.weights) total += w.size();
    VectorXd v(total);
    Eigen::Index off = 0;
    for (const auto& w : mg.weights) {
      v.segment(off, w.size()) = Eigen::Map<const VectorXd>(w.data(), w.size());
      off += w.size();
    }
    out.push_back(std::move(v));
  }
  return out;
}

PairStats grad_cosine(const std::vector<VectorXd>& grads) {
  if (grads.size() < 2) throw ConfigError("grad_cosine: need at least 2 models");
  std::vector<double> vals;
  PairStats st;
  for (std::size_t a = 0; a < grads.size(); ++a) {
    for (std::size_t b = a + 1; b < grads.size(); ++b) {
      const double na = grads[a].norm(), nb = grads[b].norm();
      if (na == 0.0 || nb == 0.0) {
        ++st.n_skipped;
        continue;
      }
      vals.push_back(std::abs(grads[a].dot(grads[b])) / (na * nb));
    }
  }
  st.n_pairs = static_cast<int>(vals.size());
  if (vals.empty()) {
    st.mean = st.std = std::numeric_limits<double>::quiet_NaN();
    return st;
  }
  st.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  double ss = 0.0;
  for (double v : vals) ss += (v - st.mean) * (v - st.mean);
  st.std = vals.size() > 1 ? std::sqrt(ss / (vals.size() - 1)) : 0.0;
  return st;
}

PairStats grad_cosine(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch, LossKind kind) {
  return grad_cosine(flat_weight_grads(grads(params, arch, batch, kind)));
}

std::vector<double> grad_norms(const Gradients& g) {
  std::vector<double> out;
  for (const auto& mg : g.models) {
    for (const auto& w : mg.weights) out.push_back(w.norm());
  }
  return out;
}

Histogram log_histogram(const std::vector<double>& samples, int bins) {
  if (bins < 1) throw ConfigError("histogram: bins must be >= 1");
  Histogram h;
  h.total = static_cast<int>(samples.size());
  h.counts.assign(bins, 0);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (double s : samples) {
    if (s < 0.0 || !std::isfinite(s)) throw NumericalError("histogram: samples must be finite and >= 0");
    if (s == 0.0) {
      ++h.zero_count;
      continue;
    }
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (h.zero_count == h.total) return h;
  if (hi == lo) {
    lo /= 1.5;
    hi *= 1.5;
  }
  const double llo = std::log10(lo), lhi = std::log10(hi);
  for (int b = 0; b <= bins; ++b) h.edges.push_back(std::pow(10.0, llo + (lhi - llo) * b / bins));
  for (double s : samples) {
    if (s == 0.0) continue;
    int b = static_cast<int>((std::log10(s) - llo) / (lhi - llo) * bins);
    h.counts[std::clamp(b, 0, bins - 1)]++;
  }
  return h;
}

Histogram grad_norm_hist(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch, LossKind kind,
                         int bins) {
  const Gradients g = grads(params, arch, batch, kind);
  Histogram h = log_histogram(grad_norms(g), bins);
  double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
  for (const auto& v : flat_weight_grads(g)) {
    mn = std::min(mn, v.norm());
    mx = std::max(mx, v.norm());
  }
  h.spread = mn > 0.0 ? mx / mn : (mx > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  return h;
}

PairStats binarized_correlation(const std::vector<MatrixXd>& predictions, const std::vector<int>& labels) {
  const std::size_t m = predictions.size();
  if (m < 2) throw ConfigError("binarized_correlation: need at least 2 models");
  if (labels.size() < 2) throw ConfigError("binarized_correlation: need at least 2 points");
  std::vector<VectorXd> ind;
  for (const auto& p : predictions) {
    if (p.rows() != static_cast<Eigen::Index>(labels.size())) {
      throw ConfigError("binarized_correlation: prediction rows must match labels");
    }
    VectorXd v(p.rows());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      Eigen::Index arg = 0;
      p.row(r).maxCoeff(&arg);
      v[r] = static_cast<int>(arg) == labels[r] ? 1.0 : 0.0;
    }
    ind.push_back(v.array() - v.mean());
  }
  PairStats st;
  std::vector<double> vals;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const double na = ind[a].norm(), nb = ind[b].norm();
      if (na == 0.0 || nb == 0.0) {
        ++st.n_skipped;
        continue;
      }
      vals.push_back(ind[a].dot(ind[b]) / (na * nb));
    }
  }
  st.n_pairs = static_cast<int>(vals.size());
  if (vals.empty()) {
    st.mean = st.std = std::numeric_limits<double>::quiet_NaN();
    return st;
  }
  st.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  double ss = 0.0;
  for (double v : vals) ss += (v - st.mean) * (v - st.mean);
  st.std = vals.size() > 1 ? std::sqrt(ss / (vals.size() - 1)) : 0.0;
  return st;
}

double Contributions::residual() const {
  return (delta.rowwise().sum() - actual).norm();
}

double Contributions::offdiag_ratio() const {
  double off = 0.0, diag = 0.0;
  for (int alpha = 0; alpha < n_models; ++alpha) {
    for (int i = 0; i < n_points; ++i) {
      for (int beta = 0; beta < n_models; ++beta) {
        (alpha == beta ? diag : off) += std::abs(delta(alpha * n_points + i, beta));
      }
    }
  }
  if (n_models < 2) return 0.0;
  off /= static_cast<double>(n_models - 1);
  if (diag == 0.0) throw NumericalError("contribution offdiag_ratio: zero diagonal");
  return off / diag;
}

Contributions contribution_decomposition(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch,
                                         const MatrixXd& eval_inputs, const TrainConfig& cfg, int channel) {
  cfg.validate();
  const int m = params.n_models();
  const int n = static_cast<int>(eval_inputs.rows());
  const int depth = arch.depth();
  const Gradients g = grads(params, arch, batch, cfg.loss_kind);
  const double wfac = -cfg.eta_w * gamma_factor(cfg, m) / m;
  Contributions c;
  c.n_models = m;
  c.n_points = n;
  c.delta = MatrixXd::Zero(m * n, m);
  c.actual.resize(m * n);
  MatrixXd seed = MatrixXd::Zero(n, arch.output_dim);
  seed.col(channel).setOnes();
  const EnsembleParams next = sgd_step(params, arch, g, cfg);
  for (int alpha = 0; alpha < m; ++alpha) {
    const ModelTape tape = forward_model(params, arch, alpha, eval_inputs);
    const RowGrads rg = backward_model(params, arch, alpha, tape, seed);
    for (int beta = 0; beta < m; ++beta) {
      VectorXd acc = VectorXd::Zero(n);
      for (int l = 1; l <= depth + 1; ++l) {
        const MatrixXd proj = tape.x[l - 1] * g.models[beta].weights[l - 1];
        acc += layer_scale(arch, l) * proj.cwiseProduct(rg.delta[l]).rowwise().sum();
      }
      c.delta.col(beta).segment(alpha * n, n) = wfac * acc;
    }
    VectorXd ind = VectorXd::Zero(n);
    const ModelGrads& mg = g.models[alpha];
    for (int l = 0; l <= depth; ++l) {
      if (mg.post[l]) ind += rg.d_post[l] * mg.post[l]->transpose();
    }
    for (int l = 1; l <= depth + 1; ++l) {
      if (mg.pre[l]) ind += rg.d_pre[l] * mg.pre[l]->transpose();
    }
    c.delta.col(alpha).segment(alpha * n, n) -= cfg.eta_u_value() * ind;
    c.actual.segment(alpha * n, n) = forward_model(next, arch, alpha, eval_inputs).out.col(channel) -
                                     tape.out.col(channel);
  }
  return c;
}

}  // namespace embens
