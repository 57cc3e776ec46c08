#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "embens/ensemble_net.hpp"
#include "embens/numerics.hpp"

namespace embens {

// --- Empirical NTK ----------------------------------------------------------

/// Finite-width ensemble NTK on n inputs for one output channel.
/// Matrices are (M n) x (M n) with row alpha * n + i.
struct EmpiricalKernel {
  Eigen::MatrixXd values;  // gamma/M * common + individual
  Eigen::MatrixXd common;  // <df_alpha/dw, df_beta/dw>
  Eigen::MatrixXd individual;  // same-model modulation part, zero off the block diagonal
  int n_models = 1;
  int n_points = 0;
  GammaMode gamma_mode = GammaMode::m;

  double at(int alpha, int beta, int i, int j) const { return values(alpha * n_points + i, beta * n_points + j); }
};

EmpiricalKernel empirical_ntk(const EnsembleParams& params, const ArchSpec& arch, const Eigen::MatrixXd& inputs,
                              GammaMode mode, double gamma_value = 1.0, int channel = 0);

/// Class-indexed NTK with rows ordered (alpha, point, class):
/// index (alpha * n + a) * C + i.
struct ClassNtk {
  Eigen::MatrixXd values;
  int n_models = 1;
  int n_points = 0;
  int n_classes = 1;

  double at(int i, int j, int alpha, int beta, int a, int b) const {
    return values((alpha * n_points + a) * n_classes + i, (beta * n_points + b) * n_classes + j);
  }
};

ClassNtk class_ntk(const EnsembleParams& params, const ArchSpec& arch, const Eigen::MatrixXd& inputs, GammaMode mode,
                   double gamma_value = 1.0);

/// Reduced kernels are (M B) x (M B), row alpha * B + a.
/// probs[alpha] is B x C softmax output of model alpha.
Eigen::MatrixXd ntk_reduce_nll(const ClassNtk& k, const std::vector<Eigen::MatrixXd>& probs,
                               const std::vector<int>& labels);
Eigen::MatrixXd ntk_reduce_target(const ClassNtk& k, const std::vector<int>& labels);

struct InteractionMetrics {
  double offdiag_ratio = 0.0;  // mean Theta^2 over alpha != beta / mean over alpha == beta
  double coherent_ratio = 0.0;  // m-subset ratio
};

/// Subsets S_m are the first m models of a seeded shuffle, skipping alpha.
InteractionMetrics interaction_metrics(const Eigen::MatrixXd& reduced, int n_models, int m, Seed seed);

/// Relative Frobenius change of the empirical NTK between two parameter sets.
double ntk_drift(const EnsembleParams& params_t, const EnsembleParams& params_0, const ArchSpec& arch,
                 const Eigen::MatrixXd& inputs, GammaMode mode, double gamma_value = 1.0);

// --- Covariance at initialization -------------------------------------------

struct EmpiricalCovariance {
  Eigen::MatrixXd same;  // mean over alpha of f_alpha(x_i) f_alpha(x_j)
  Eigen::MatrixXd diff;  // mean over alpha != beta of f_alpha(x_i) f_beta(x_j); empty when M = 1
  Eigen::MatrixXd same_stderr;
  Eigen::MatrixXd diff_stderr;
  int n_seeds = 0;
};

/// Seeds are split_rng(seed, s) for s = 0..n_seeds-1.
EmpiricalCovariance empirical_covariance(const ArchSpec& arch, const Eigen::MatrixXd& inputs, int n_seeds, Seed seed,
                                         int channel = 0);

// --- Gradient statistics ----------------------------------------------------

struct PairStats {
  double mean = 0.0;
  double std = 0.0;
  int n_pairs = 0;
  int n_skipped = 0;
};

/// |cos| between flattened shared-weight gradients of models alpha < beta.
PairStats grad_cosine(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch, LossKind kind);
PairStats grad_cosine(const std::vector<Eigen::VectorXd>& grads);

/// Flattened shared-weight gradient of every model.
std::vector<Eigen::VectorXd> flat_weight_grads(const Gradients& g);

struct Histogram {
  std::vector<double> edges;  // log-spaced, size bins + 1
  std::vector<int> counts;    // size bins
  int zero_count = 0;         // norms that are exactly zero
  int total = 0;
  double spread = 0.0;        // max / min over models of the whole-gradient norm (inf if a min is 0)
};

/// Norms of dL_alpha/dW^l for every (layer, model).
std::vector<double> grad_norms(const Gradients& g);

/// Log-spaced histogram between the smallest and largest positive sample.
Histogram log_histogram(const std::vector<double>& samples, int bins);

Histogram grad_norm_hist(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch, LossKind kind,
                         int bins);

// --- Prediction correlation -------------------------------------------------

/// Mean Pearson correlation of correct/incorrect indicators over model pairs.
/// Pairs where either indicator is constant are skipped and counted.
PairStats binarized_correlation(const std::vector<Eigen::MatrixXd>& predictions, const std::vector<int>& labels);

// --- One-step update decomposition ------------------------------------------

struct Contributions {
  /// (M n) x M: row alpha * n + i, column beta holds Delta_beta f_alpha(x_i).
  Eigen::MatrixXd delta;
  /// (M n) x 1 actual change of f_alpha(x_i) after one sgd_step.
  Eigen::VectorXd actual;
  int n_models = 1;
  int n_points = 0;

  /// || sum_beta Delta_beta f - actual ||.
  double residual() const;
  /// Mean |offdiagonal| / mean |diagonal| contribution.
  double offdiag_ratio() const;
};

Contributions contribution_decomposition(const EnsembleParams& params, const ArchSpec& arch, const Batch& batch,
                                         const Eigen::MatrixXd& eval_inputs, const TrainConfig& cfg,
                                         int channel = 0);

}  // namespace embens
