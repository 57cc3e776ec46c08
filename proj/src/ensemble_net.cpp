#include "embens/ensemble_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace embens {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

const std::optional<ModulationSpec> kAbsent;

// Stream ids for init_params; kept stable so checkpoints and tests stay
// reproducible.
constexpr std::uint64_t kWeightStream = 1;
constexpr std::uint64_t kModulationStream = 2;

std::uint64_t slot_id(bool is_post, int l) { return 2 * static_cast<std::uint64_t>(l) + (is_post ? 0 : 1); }

void scale_cols(MatrixXd& m, const RowVectorXd& row) { m.array().rowwise() *= row.array(); }

MatrixXd apply_act(Activation act, const MatrixXd& a) {
  return a.unaryExpr([act](double v) { return activate(act, v); });
}

MatrixXd apply_act_deriv(Activation act, const MatrixXd& a) {
  return a.unaryExpr([act](double v) { return activate_deriv(act, v); });
}

void fill_modulation(MatrixXd& dst, const std::optional<ModulationSpec>& spec, Seed slot_seed) {
  if (!spec) {
    dst.setOnes();
    return;
  }
  for (Eigen::Index alpha = 0; alpha < dst.rows(); ++alpha) {
    Rng rng(split_rng(slot_seed, static_cast<std::uint64_t>(alpha)));
    for (Eigen::Index j = 0; j < dst.cols(); ++j) dst(alpha, j) = spec->sample(rng);
  }
}

void check_input(const ArchSpec& arch, const MatrixXd& inputs) {
  if (inputs.cols() != arch.input_dim) {
    throw ConfigError("input dimension mismatch: expected " + std::to_string(arch.input_dim) + ", got " +
                      std::to_string(inputs.cols()));
  }
}

void apply_sgd_inplace(EnsembleParams& p, const ArchSpec& arch, const Gradients& g, const TrainConfig& cfg) {
  const int m = p.n_models();
  if (static_cast<int>(g.models.size()) != m) throw ConfigError("sgd_step: gradient/model count mismatch");
  const double step_w = cfg.eta_w * (gamma_factor(cfg, m) / m);
  const double eta_u = cfg.eta_u_value();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    std::vector<MatrixXd> terms;
    terms.reserve(m);
    for (const auto& mg : g.models) terms.push_back(mg.weights[l]);
    p.weights[l] -= step_w * pairwise_sum(terms);
  }
  const int depth = arch.depth();
  for (int alpha = 0; alpha < m; ++alpha) {
    const ModelGrads& mg = g.models[alpha];
    for (int l = 0; l <= depth; ++l) {
      if (post_trainable(arch, l) && mg.post[l]) p.post[l].row(alpha) -= eta_u * *mg.post[l];
    }
    for (int l = 1; l <= depth + 1; ++l) {
      if (pre_trainable(arch, l) && mg.pre[l]) p.pre[l].row(alpha) -= eta_u * *mg.pre[l];
    }
  }
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

}  // namespace

const std::optional<ModulationSpec>& post_spec(const ArchSpec& arch, int l) {
  if (l == 0) return arch.input_mod;
  if (l >= 1 && l <= arch.depth()) return arch.layers[l - 1].post_mod;
  return kAbsent;
}

const std::optional<ModulationSpec>& pre_spec(const ArchSpec& arch, int l) {
  if (l >= 1 && l <= arch.depth()) return arch.layers[l - 1].pre_mod;
  if (l == arch.depth() + 1) return arch.output_mod;
  return kAbsent;
}

bool post_trainable(const ArchSpec& arch, int l) {
  const auto& s = post_spec(arch, l);
  return s && s->trainable;
}

bool pre_trainable(const ArchSpec& arch, int l) {
  const auto& s = pre_spec(arch, l);
  return s && s->trainable;
}

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "cross_entropy"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
  throw ConfigError("unknown loss kind: " + s);
}

Batch Batch::rows(const std::vector<int>& idx) const {
  Batch b;
  b.inputs.resize(static_cast<Eigen::Index>(idx.size()), inputs.cols());
  if (targets.size() > 0) b.targets.resize(static_cast<Eigen::Index>(idx.size()), targets.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    b.inputs.row(r) = inputs.row(idx[r]);
    if (targets.size() > 0) b.targets.row(r) = targets.row(idx[r]);
    if (!labels.empty()) b.labels.push_back(labels[idx[r]]);
  }
  return b;
}

double layer_scale(const ArchSpec& arch, int l) {
  return arch.parametrization == Parametrization::ntk ? 1.0 / std::sqrt(static_cast<double>(arch.width(l - 1)))
                                                       : 1.0;
}

EnsembleParams init_params(const ArchSpec& arch, Seed seed) {
  arch.validate();
  const int depth = arch.depth();
  const int m = arch.n_models;
  EnsembleParams p;
  const Seed wseed = split_rng(seed, kWeightStream);
  for (int l = 1; l <= depth + 1; ++l) {
    MatrixXd w(arch.width(l - 1), arch.width(l));
    Rng rng(split_rng(wseed, static_cast<std::uint64_t>(l)));
    const double sd = arch.parametrization == Parametrization::ntk
                          ? 1.0
                          : 1.0 / std::sqrt(static_cast<double>(arch.width(l - 1)));
    rng.fill_normal(w, sd);
    p.weights.push_back(std::move(w));
  }
  const Seed mseed = split_rng(seed, kModulationStream);
  p.post.resize(depth + 1);
  p.pre.resize(depth + 2);
  for (int l = 0; l <= depth; ++l) {
    p.post[l].resize(m, arch.width(l));
    fill_modulation(p.post[l], post_spec(arch, l), split_rng(mseed, slot_id(true, l)));
  }
  for (int l = 1; l <= depth + 1; ++l) {
    p.pre[l].resize(m, arch.width(l));
    fill_modulation(p.pre[l], pre_spec(arch, l), split_rng(mseed, slot_id(false, l)));
  }
  return p;
}

void resample_fixed_modulations(EnsembleParams& params, const ArchSpec& arch, Seed seed) {
  const int depth = arch.depth();
  for (int l = 0; l <= depth; ++l) {
    const auto& s = post_spec(arch, l);
    if (s && !s->trainable && !s->is_constant()) fill_modulation(params.post[l], s, split_rng(seed, slot_id(true, l)));
  }
  for (int l = 1; l <= depth + 1; ++l) {
    const auto& s = pre_spec(arch, l);
    if (s && !s->trainable && !s->is_constant()) fill_modulation(params.pre[l], s, split_rng(seed, slot_id(false, l)));
  }
}

ModelTape forward_model(const EnsembleParams& params, const ArchSpec& arch, int alpha, const MatrixXd& inputs) {
  check_input(arch, inputs);
  const int depth = arch.depth();
  ModelTape t;
  t.input = inputs;
  t.x.resize(depth + 1);
  t.z.resize(depth + 2);
  t.a.resize(depth + 1);
  t.x[0] = inputs;
  scale_cols(t.x[0], params.post[0].row(alpha));
  for (int l = 1; l <= depth + 1; ++l) {
    t.z[l].noalias() = t.x[l - 1] * params.weights[l - 1];
    t.z[l] *= layer_scale(arch, l);
    if (l <= depth) {
      t.a[l] = t.z[l];
      scale_cols(t.a[l], params.pre[l].row(alpha));
      t.x[l] = apply_act(arch.activation, t.a[l]);
      scale_cols(t.x[l], params.post[l].row(alpha));
    } else {
      t.out = t.z[l];
      scale_cols(t.out, params.pre[l].row(alpha));
    }
  }
  return t;
}

RowGrads backward_model(const EnsembleParams& params, const ArchSpec& arch, int alpha, const ModelTape& tape,
                        const MatrixXd& d_out) {
  const int depth = arch.depth();
  RowGrads g;
  g.delta.resize(depth + 2);
  g.d_post.resize(depth + 1);
  g.d_pre.resize(depth + 2);
  if (pre_trainable(arch, depth + 1)) g.d_pre[depth + 1] = d_out.cwiseProduct(tape.z[depth + 1]);
  g.delta[depth + 1] = d_out;
  scale_cols(g.delta[depth + 1], params.pre[depth + 1].row(alpha));
  for (int l = depth + 1; l >= 1; --l) {
    MatrixXd gx = g.delta[l] * params.weights[l - 1].transpose();
    gx *= layer_scale(arch, l);
    const int k = l - 1;
    if (k == 0) {
      if (post_trainable(arch, 0)) g.d_post[0] = gx.cwiseProduct(tape.input);
      break;
    }
    if (post_trainable(arch, k)) g.d_post[k] = gx.cwiseProduct(apply_act(arch.activation, tape.a[k]));
    scale_cols(gx, params.post[k].row(alpha));
    MatrixXd ga = gx.cwiseProduct(apply_act_deriv(arch.activation, tape.a[k]));
    if (pre_trainable(arch, k)) g.d_pre[k] = ga.cwiseProduct(tape.z[k]);
    scale_cols(ga, params.pre[k].row(alpha));
    g.delta[k] = std::move(ga);
  }
  return g;
}

Eigen::MatrixXd forward(const EnsembleParams& params, const ArchSpec& arch, const VectorXd& x) {
  const MatrixXd in = x.transpose();
  MatrixXd out(params.n_models(), arch.output_dim);
  for (int alpha = 0; alpha < params.n_models(); ++alpha) out.row(alpha) = forward_model(params, arch, alpha, in).out;
  return out;
}

std::vector<MatrixXd> forward_batch(const EnsembleParams& params, const ArchSpec& arch, const MatrixXd& inputs) {
  std::vector<MatrixXd> outs;
  outs.reserve(params.n_models());
  for (int alpha = 0; alpha < params.n_models(); ++alpha) outs.push_back(forward_model(params, arch, alpha, inputs).out);
  return outs;
}

double batch_loss(const MatrixXd& out, const Batch& batch, LossKind kind, MatrixXd* d_out) {
  const Eigen::Index b = out.rows();
  if (b == 0) throw ConfigError("batch_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(b);
  if (kind == LossKind::mse) {
    if (batch.targets.rows() != b || batch.targets.cols() != out.cols()) {
      throw ConfigError("batch_loss: MSE targets must be B x output_dim");
    }
    const MatrixXd diff = out - batch.targets;
    if (d_out) *d_out = diff * inv_b;
    return 0.5 * diff.squaredNorm() * inv_b;
  }
  if (static_cast<Eigen::Index>(batch.labels.size()) != b) throw ConfigError("batch_loss: labels must have B entries");
  double total = 0.0;
  if (d_out) d_out->resize(out.rows(), out.cols());
  for (Eigen::Index r = 0; r < b; ++r) {
    const int c = batch.labels[r];
    if (c < 0 || c >= out.cols()) throw ConfigError("batch_loss: class index out of range");
    const double mx = out.row(r).maxCoeff();
    const RowVectorXd e = (out.row(r).array() - mx).exp().matrix();
    const double s = e.sum();
    total += std::log(s) + mx - out(r, c);
    if (d_out) {
      d_out->row(r) = e / s;
      (*d_out)(r, c) -= 1.0;
      d_out->row(r) *= inv_b;
    }
  }
  return total * inv_b;
}

VectorXd per_model_loss(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch, LossKind kind) {
  if (batch.size() == 0) throw ConfigError("per_model_loss: empty batch");
  VectorXd losses(params.n_models());
  for (int alpha = 0; alpha < params.n_models(); ++alpha) {
    losses[alpha] = batch_loss(forward_model(params, arch, alpha, batch.inputs).out, batch, kind);
  }
  return losses;
}

bool ModelGrads::has_modulation_grads() const {
  for (const auto& p : post) {
    if (p) return true;
  }
  for (const auto& p : pre) {
    if (p) return true;
  }
  return false;
}

Gradients grads(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch, LossKind kind) {
  const int depth = arch.depth();
  Gradients g;
  g.models.resize(params.n_models());
  for (int alpha = 0; alpha < params.n_models(); ++alpha) {
    const ModelTape tape = forward_model(params, arch, alpha, batch.inputs);
    MatrixXd d_out;
    batch_loss(tape.out, batch, kind, &d_out);
    const RowGrads rg = backward_model(params, arch, alpha, tape, d_out);
    ModelGrads& mg = g.models[alpha];
    for (int l = 1; l <= depth + 1; ++l) {
      MatrixXd gw = tape.x[l - 1].transpose() * rg.delta[l];
      gw *= layer_scale(arch, l);
      mg.weights.push_back(std::move(gw));
    }
    mg.post.resize(depth + 1);
    mg.pre.resize(depth + 2);
    for (int l = 0; l <= depth; ++l) {
      if (post_trainable(arch, l)) mg.post[l] = rg.d_post[l].colwise().sum();
    }
    for (int l = 1; l <= depth + 1; ++l) {
      if (pre_trainable(arch, l)) mg.pre[l] = rg.d_pre[l].colwise().sum();
    }
  }
  return g;
}

std::string to_string(GammaMode g) {
  switch (g) {
    case GammaMode::one: return "one";
    case GammaMode::m: return "m";
    case GammaMode::custom: return "custom";
  }
  return "?";
}

GammaMode parse_gamma_mode(const std::string& s) {
  if (s == "one" || s == "1") return GammaMode::one;
  if (s == "m" || s == "M") return GammaMode::m;
  if (s == "custom") return GammaMode::custom;
  throw ConfigError("unknown gamma mode: " + s);
}

void TrainConfig::validate() const {
  if (!(eta_w > 0.0) && eta_w != 0.0) throw ConfigError("train: eta_w must be >= 0");
  if (eta_u && *eta_u < 0.0) throw ConfigError("train: eta_u must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (gamma_mode == GammaMode::custom && !(gamma_value > 0.0)) throw ConfigError("train: custom gamma must be > 0");
}

double gamma_factor(GammaMode mode, double custom_value, int n_models) {
  switch (mode) {
    case GammaMode::one: return 1.0;
    case GammaMode::m: return static_cast<double>(n_models);
    case GammaMode::custom: return custom_value;
  }
  return 1.0;
}

EnsembleParams sgd_step(const EnsembleParams& params, const ArchSpec& arch, const Gradients& g,
                        const TrainConfig& cfg) {
  EnsembleParams next = params;
  apply_sgd_inplace(next, arch, g, cfg);
  return next;
}

double accuracy(const MatrixXd& out, const std::vector<int>& labels) {
  if (out.rows() == 0) return 0.0;
  int correct = 0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Eigen::Index arg = 0;
    out.row(r).maxCoeff(&arg);
    correct += static_cast<int>(arg) == labels[r] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(out.rows());
}

EpochRecord evaluate(const EnsembleParams& params, const ArchSpec& arch, const Dataset& data, LossKind kind) {
  EpochRecord rec;
  const int m = params.n_models();
  auto eval_split = [&](const Batch& b, std::vector<double>& loss, std::vector<double>& acc, double& ens_acc,
                        double* ens_loss) {
    if (b.size() == 0) return;
    MatrixXd mean_out = MatrixXd::Zero(b.size(), arch.output_dim);
    for (int alpha = 0; alpha < m; ++alpha) {
      const MatrixXd out = forward_model(params, arch, alpha, b.inputs).out;
      loss.push_back(batch_loss(out, b, kind));
      if (data.is_classification()) acc.push_back(accuracy(out, b.labels));
      mean_out += out;
    }
    mean_out /= static_cast<double>(m);
    if (data.is_classification()) ens_acc = accuracy(mean_out, b.labels);
    if (ens_loss) *ens_loss = batch_loss(mean_out, b, kind);
  };
  eval_split(data.train, rec.train_loss, rec.train_acc, rec.ensemble_train_acc, nullptr);
  eval_split(data.test, rec.test_loss, rec.test_acc, rec.ensemble_test_acc, &rec.ensemble_test_loss);
  return rec;
}

TrainResult train(EnsembleParams params, const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg,
                  Seed seed) {
  cfg.validate();
  TrainResult result;
  const int n = data.train.size();
  if (n == 0) throw ConfigError("train: empty training set");
  result.history.push_back(evaluate(params, arch, data, cfg.loss_kind));
  const Seed shuffle_seed = split_rng(seed, 1);
  const Seed mask_seed = split_rng(seed, 2);
  std::vector<int> order(n);
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(split_rng(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      const Batch batch = data.train.rows(std::vector<int>(order.begin() + start, order.begin() + stop));
      Gradients g;
      if (cfg.dropout_resample) {
        EnsembleParams sampled = params;
        resample_fixed_modulations(sampled, arch, split_rng(mask_seed, step));
        g = grads(sampled, arch, batch, cfg.loss_kind);
      } else {
        g = grads(params, arch, batch, cfg.loss_kind);
      }
      apply_sgd_inplace(params, arch, g, cfg);
      ++step;
    }
    EpochRecord rec = evaluate(params, arch, data, cfg.loss_kind);
    rec.epoch = epoch;
    const bool finite = all_finite(Eigen::Map<const VectorXd>(rec.train_loss.data(),
                                                              static_cast<Eigen::Index>(rec.train_loss.size())));
    result.history.push_back(std::move(rec));
    if (!finite) {
      result.diverged = true;
      result.diverged_epoch = epoch;
      result.divergence_message = "non-finite training loss at epoch " + std::to_string(epoch);
      break;
    }
  }
  result.params = std::move(params);
  return result;
}

// --- LLD ---------------------------------------------------------------------

void check_lld(const ArchSpec& arch) {
  const int depth = arch.depth();
  if (depth < 1) throw ConfigError("LLD: needs at least one hidden layer");
  auto fixed = [](const std::optional<ModulationSpec>& s) { return !s || (s->is_constant() && !s->trainable); };
  for (int l = 0; l <= depth; ++l) {
    if (l != depth && !fixed(post_spec(arch, l))) {
      throw ConfigError("LLD: post modulation at layer " + std::to_string(l) + " is per-model");
    }
  }
  for (int l = 1; l <= depth + 1; ++l) {
    if (!fixed(pre_spec(arch, l))) throw ConfigError("LLD: pre modulation at layer " + std::to_string(l) + " is per-model");
  }
}

namespace {

struct SharedFeatures {
  std::vector<MatrixXd> x;  // shared post-activations x[0..L-1]
  std::vector<MatrixXd> z;  // z[1..L]
  std::vector<MatrixXd> a;  // a[1..L]
  MatrixXd h;               // phi(a_L), before the per-model mask
};

// Every modulation except u^L is identical across models, so row 0 serves all.
SharedFeatures shared_features(const EnsembleParams& params, const ArchSpec& arch, const MatrixXd& inputs) {
  check_input(arch, inputs);
  const int depth = arch.depth();
  SharedFeatures s;
  s.x.resize(depth);
  s.z.resize(depth + 1);
  s.a.resize(depth + 1);
  s.x[0] = inputs;
  scale_cols(s.x[0], params.post[0].row(0));
  for (int l = 1; l <= depth; ++l) {
    s.z[l].noalias() = s.x[l - 1] * params.weights[l - 1];
    s.z[l] *= layer_scale(arch, l);
    s.a[l] = s.z[l];
    scale_cols(s.a[l], params.pre[l].row(0));
    MatrixXd act = apply_act(arch.activation, s.a[l]);
    if (l < depth) {
      scale_cols(act, params.post[l].row(0));
      s.x[l] = std::move(act);
    } else {
      s.h = std::move(act);
    }
  }
  return s;
}

}  // namespace

MatrixXd lld_fused_inference(const EnsembleParams& params, const ArchSpec& arch, const MatrixXd& inputs) {
  check_lld(arch);
  const int depth = arch.depth();
  SharedFeatures s = shared_features(params, arch, inputs);
  const RowVectorXd u_mean = params.post[depth].colwise().mean();
  scale_cols(s.h, u_mean);
  MatrixXd out = s.h * params.weights[depth];
  out *= layer_scale(arch, depth + 1);
  scale_cols(out, params.pre[depth + 1].row(0));
  return out;
}

VectorXd lld_fused_inference(const EnsembleParams& params, const ArchSpec& arch, const VectorXd& x) {
  const MatrixXd in = x.transpose();
  return lld_fused_inference(params, arch, in).row(0).transpose();
}

FusedLossResult lld_fused_train_loss(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch,
                                     const TrainConfig& cfg) {
  check_lld(arch);
  const int depth = arch.depth();
  const int m = params.n_models();
  const int c = arch.output_dim;
  const int n_last = arch.width(depth);
  const double s_out = layer_scale(arch, depth + 1);
  const double gscale = gamma_factor(cfg, m) / m;
  const SharedFeatures s = shared_features(params, arch, batch.inputs);

  // Per-model readout W_alpha = diag(u_alpha) W diag(v_out), stacked side by side.
  MatrixXd w_out = params.weights[depth];
  scale_cols(w_out, params.pre[depth + 1].row(0));
  MatrixXd w_stack(n_last, static_cast<Eigen::Index>(m) * c);
  for (int alpha = 0; alpha < m; ++alpha) {
    w_stack.middleCols(static_cast<Eigen::Index>(alpha) * c, c) =
        params.post[depth].row(alpha).transpose().asDiagonal() * w_out;
  }
  MatrixXd f_all = s.h * w_stack;
  f_all *= s_out;

  FusedLossResult r;
  MatrixXd d_all(f_all.rows(), f_all.cols());
  double total = 0.0;
  for (int alpha = 0; alpha < m; ++alpha) {
    MatrixXd d;
    total += batch_loss(f_all.middleCols(static_cast<Eigen::Index>(alpha) * c, c), batch, cfg.loss_kind, &d);
    d_all.middleCols(static_cast<Eigen::Index>(alpha) * c, c) = d;
  }
  r.loss = gscale * total;

  // Readout gradients from P = h^T D, block alpha is N_L x C.
  const MatrixXd p = s.h.transpose() * d_all;
  MatrixXd gw_out = MatrixXd::Zero(n_last, c);
  const bool train_u = post_trainable(arch, depth);
  for (int alpha = 0; alpha < m; ++alpha) {
    const auto block = p.middleCols(static_cast<Eigen::Index>(alpha) * c, c);
    gw_out += params.post[depth].row(alpha).transpose().asDiagonal() * block;
    if (train_u) r.post_grads.push_back(s_out * (block.cwiseProduct(w_out)).rowwise().sum().transpose());
  }
  gw_out *= gscale * s_out;
  scale_cols(gw_out, params.pre[depth + 1].row(0));

  // Back through the shared layers once.
  MatrixXd gh = d_all * w_stack.transpose();
  gh *= gscale * s_out;
  r.weight_grads.resize(depth + 1);
  r.weight_grads[depth] = std::move(gw_out);
  MatrixXd delta = gh.cwiseProduct(apply_act_deriv(arch.activation, s.a[depth]));
  scale_cols(delta, params.pre[depth].row(0));
  for (int l = depth; l >= 1; --l) {
    r.weight_grads[l - 1] = s.x[l - 1].transpose() * delta;
    r.weight_grads[l - 1] *= layer_scale(arch, l);
    if (l == 1) break;
    MatrixXd gx = delta * params.weights[l - 1].transpose();
    gx *= layer_scale(arch, l);
    scale_cols(gx, params.post[l - 1].row(0));
    delta = gx.cwiseProduct(apply_act_deriv(arch.activation, s.a[l - 1]));
    scale_cols(delta, params.pre[l - 1].row(0));
  }
  return r;
}

EnsembleParams apply_fused_step(const EnsembleParams& params, const ArchSpec& arch, const FusedLossResult& r,
                                const TrainConfig& cfg) {
  EnsembleParams next = params;
  for (std::size_t l = 0; l < next.weights.size(); ++l) next.weights[l] -= cfg.eta_w * r.weight_grads[l];
  const int depth = arch.depth();
  for (std::size_t alpha = 0; alpha < r.post_grads.size(); ++alpha) {
    next.post[depth].row(static_cast<Eigen::Index>(alpha)) -= cfg.eta_u_value() * r.post_grads[alpha];
  }
  return next;
}

}  // namespace embens
