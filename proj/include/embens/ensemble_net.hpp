#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "embens/arch.hpp"
#include "embens/numerics.hpp"

namespace embens {

/// Shared weights plus per-model modulations of an embedded ensemble.
///
/// weights[l-1] is W^l with shape N_{l-1} x N_l, l = 1..L+1.
/// post[l] is u^l with shape M x N_l for l = 0..L (post[0] modulates inputs).
/// pre[l] is v^l with shape M x N_l for l = 1..L+1 (pre[L+1] modulates
/// outputs; pre[0] is empty). Absent modulations are stored as ones.
struct EnsembleParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::MatrixXd> post;
  std::vector<Eigen::MatrixXd> pre;

  int n_models() const { return post.empty() ? 0 : static_cast<int>(post[0].rows()); }
};

const std::optional<ModulationSpec>& post_spec(const ArchSpec& arch, int l);
const std::optional<ModulationSpec>& pre_spec(const ArchSpec& arch, int l);
bool post_trainable(const ArchSpec& arch, int l);
bool pre_trainable(const ArchSpec& arch, int l);

enum class LossKind { mse, cross_entropy };
std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

/// Inputs plus either real targets (B x C, MSE) or class labels (CE).
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  std::vector<int> labels;

  int size() const { return static_cast<int>(inputs.rows()); }
  Batch rows(const std::vector<int>& idx) const;
};

struct Dataset {
  Batch train;
  Batch test;
  int n_classes = 0;  // 0 for regression

  bool is_classification() const { return n_classes > 0; }
};

EnsembleParams init_params(const ArchSpec& arch, Seed seed);

/// Redraws every non-trainable, non-constant modulation from its spec.
void resample_fixed_modulations(EnsembleParams& params, const ArchSpec& arch, Seed seed);

/// Per-model outputs f_alpha(x): an M x output_dim matrix.
Eigen::MatrixXd forward(const EnsembleParams& params, const ArchSpec& arch, const Eigen::VectorXd& x);

/// Per-model outputs for a batch; element alpha is B x output_dim.
std::vector<Eigen::MatrixXd> forward_batch(const EnsembleParams& params, const ArchSpec& arch,
                                           const Eigen::MatrixXd& inputs);

// --- Single-model tape, exposed for kernel diagnostics ---------------------

struct ModelTape {
  Eigen::MatrixXd input;           // raw inputs
  std::vector<Eigen::MatrixXd> x;  // x[l], l = 0..L (x[0] is the modulated input)
  std::vector<Eigen::MatrixXd> z;  // z[l], l = 1..L+1 (z[0] empty)
  std::vector<Eigen::MatrixXd> a;  // a[l] = v^l * z^l, l = 1..L
  Eigen::MatrixXd out;
};

/// Per-row derivatives of a scalar seed on each output row.
struct RowGrads {
  std::vector<Eigen::MatrixXd> delta;   // d/dz^l, l = 1..L+1
  std::vector<Eigen::MatrixXd> d_post;  // d/du^l per row, l = 0..L (only trainable slots filled)
  std::vector<Eigen::MatrixXd> d_pre;   // d/dv^l per row, l = 1..L+1 (only trainable slots filled)
};

/// 1/sqrt(N_{l-1}) under ntk parametrization, 1 under standard.
double layer_scale(const ArchSpec& arch, int l);

ModelTape forward_model(const EnsembleParams& params, const ArchSpec& arch, int alpha, const Eigen::MatrixXd& inputs);
RowGrads backward_model(const EnsembleParams& params, const ArchSpec& arch, int alpha, const ModelTape& tape,
                        const Eigen::MatrixXd& d_out);

// --- Losses and gradients ---------------------------------------------------

/// Mean loss over the batch and its gradient w.r.t. outputs (already /B).
double batch_loss(const Eigen::MatrixXd& out, const Batch& batch, LossKind kind, Eigen::MatrixXd* d_out = nullptr);

Eigen::VectorXd per_model_loss(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch,
                               LossKind kind);

/// Gradients of one model's loss. Modulation entries are nullopt for
/// non-trainable slots.
struct ModelGrads {
  std::vector<Eigen::MatrixXd> weights;                     // l = 1..L+1 at [l-1]
  std::vector<std::optional<Eigen::RowVectorXd>> post;      // l = 0..L
  std::vector<std::optional<Eigen::RowVectorXd>> pre;       // l = 0..L+1 ([0] unused)

  bool has_modulation_grads() const;
};

struct Gradients {
  std::vector<ModelGrads> models;
};

Gradients grads(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch, LossKind kind);

// --- Training ---------------------------------------------------------------

enum class GammaMode { one, m, custom };
std::string to_string(GammaMode g);
GammaMode parse_gamma_mode(const std::string& s);

struct TrainConfig {
  double eta_w = 0.1;
  std::optional<double> eta_u;  // defaults to eta_w
  GammaMode gamma_mode = GammaMode::m;
  double gamma_value = 1.0;  // used when gamma_mode == custom
  int batch_size = 32;
  int epochs = 10;
  LossKind loss_kind = LossKind::cross_entropy;
  bool dropout_resample = false;

  double eta_u_value() const { return eta_u.value_or(eta_w); }
  void validate() const;
};

double gamma_factor(GammaMode mode, double custom_value, int n_models);
inline double gamma_factor(const TrainConfig& cfg, int n_models) {
  return gamma_factor(cfg.gamma_mode, cfg.gamma_value, n_models);
}

/// dw = -eta_w * gamma(M)/M * sum_alpha g_alpha; du_alpha = -eta_u * g_u_alpha.
EnsembleParams sgd_step(const EnsembleParams& params, const ArchSpec& arch, const Gradients& g,
                        const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  std::vector<double> train_loss;  // per model
  std::vector<double> test_loss;
  std::vector<double> train_acc;   // per model, classification only
  std::vector<double> test_acc;
  double ensemble_train_acc = 0.0;
  double ensemble_test_acc = 0.0;
  double ensemble_test_loss = 0.0;  // MSE of the averaged prediction (regression)
};

struct TrainResult {
  EnsembleParams params;
  std::vector<EpochRecord> history;  // history[0] is the state before training
  bool diverged = false;
  int diverged_epoch = -1;
  std::string divergence_message;
};

TrainResult train(EnsembleParams params, const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg,
                  Seed seed);

/// Metrics of the current parameters on a dataset (epoch field left at 0).
EpochRecord evaluate(const EnsembleParams& params, const ArchSpec& arch, const Dataset& data, LossKind kind);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Eigen::MatrixXd& out, const std::vector<int>& labels);

// --- Last-layer-dropout fused path ------------------------------------------

/// Throws ConfigError unless the only per-model parameters are the post
/// modulations of the last hidden layer.
void check_lld(const ArchSpec& arch);

/// Ensemble-mean output computed in one pass with the averaged last-layer mask.
Eigen::VectorXd lld_fused_inference(const EnsembleParams& params, const ArchSpec& arch, const Eigen::VectorXd& x);
Eigen::MatrixXd lld_fused_inference(const EnsembleParams& params, const ArchSpec& arch,
                                    const Eigen::MatrixXd& inputs);

struct FusedLossResult {
  double loss = 0.0;                              // gamma/M * sum_alpha L_alpha
  std::vector<Eigen::MatrixXd> weight_grads;      // d loss / d W^l
  std::vector<Eigen::RowVectorXd> post_grads;     // d L_alpha / d u^L_alpha (trainable masks only)
};

FusedLossResult lld_fused_train_loss(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch,
                                     const TrainConfig& cfg);

/// Applies a fused gradient with the same update rule as sgd_step.
EnsembleParams apply_fused_step(const EnsembleParams& params, const ArchSpec& arch, const FusedLossResult& r,
                                const TrainConfig& cfg);

}  // namespace embens
