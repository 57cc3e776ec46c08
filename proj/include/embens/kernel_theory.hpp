#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "embens/activation.hpp"
#include "embens/arch.hpp"
#include "embens/ensemble_net.hpp"
#include "embens/numerics.hpp"

namespace embens {

struct ModulationMoments {
  double m1 = 1.0;
  double m2 = 1.0;
  bool trainable = false;
};

ModulationMoments moments(const ModulationSpec& spec);
/// Absent modulation behaves as deterministic(1), non-trainable.
ModulationMoments moments(const std::optional<ModulationSpec>& spec);

/// same_model: both arguments share one modulation draw; diff_model: two
/// independent draws.
enum class PairMode { same_model, diff_model };

struct KernelOptions {
  QuadratureSpec quad;
  /// Arc-cosine closed forms for ReLU with constant pre-modulation.
  bool relu_closed_form = false;
  /// Propagate the NTK with V2 * Phi_dot (V1^2 * Phi_dot across models)
  /// instead of the joint expectation E[v1 v2 phi'(v1 z1) phi'(v2 z2)].
  /// The two agree for constant v.
  bool factorize_premod = false;
};

/// All modulated Gaussian averages needed by one recursion step.
struct PairExpectations {
  double phi = 0.0;    // E[phi(v1 z1) phi(v2 z2)]
  double phid = 0.0;   // E[phi'(v1 z1) phi'(v2 z2)]
  double vphid = 0.0;  // E[v1 v2 phi'(v1 z1) phi'(v2 z2)]
  double phiz = 0.0;   // E[z1 phi'(v1 z1) z2 phi'(v2 z2)]
};

PairExpectations pair_expectations(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode,
                                   const KernelOptions& opt = {});

double phi_expect(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode,
                  const QuadratureSpec& q = {});
double phid_expect(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode,
                   const QuadratureSpec& q = {});
double phiz_expect(Activation act, const Cov2& c, const ModulationSpec& v, PairMode mode,
                   const QuadratureSpec& q = {});

/// Kernels of one layer's pre-activations over an input list.
struct LayerKernels {
  Eigen::MatrixXd sigma_same;
  Eigen::MatrixXd sigma_diff;
  Eigen::MatrixXd theta_com_same;
  Eigen::MatrixXd theta_com_diff;
  Eigen::MatrixXd theta_ind_same;

  Eigen::Index n() const { return sigma_same.rows(); }
};

/// Layer 1: Sigma = X X^T / N0 in both channels, Theta_com = Sigma, Theta_ind = 0.
LayerKernels sigma_init(const Eigen::MatrixXd& inputs, int n0);

/// Next-layer covariances only (theta fields left empty).
LayerKernels sigma_step(const LayerKernels& prev, const ModulationMoments& u, const ModulationSpec& v,
                        Activation act, const KernelOptions& opt = {});

/// Next-layer covariances and NTK parts.
LayerKernels ntk_step(const LayerKernels& prev, const ModulationMoments& u, const ModulationMoments& v_mom,
                      const ModulationSpec& v, Activation act, bool train_u, bool train_v,
                      const KernelOptions& opt = {});

/// Kernels for layers 1..L+1 (element 0 is layer 1). Input and output
/// modulations are not supported by the recursion.
std::vector<LayerKernels> run_recursion(const ArchSpec& arch, const Eigen::MatrixXd& inputs,
                                        const KernelOptions& opt = {});

/// (M n) x (M n) ensemble NTK; row alpha * n + i. Throws NumericalError when
/// the smallest eigenvalue is below -1e-8 * trace / (M n).
Eigen::MatrixXd assemble_ntk(const LayerKernels& k, int n_models, GammaMode mode, double gamma_value = 1.0);

/// (M n) x (M n) output covariance at initialization, same layout.
Eigen::MatrixXd gp_covariance_blocks(const LayerKernels& k, int n_models);

/// Diagonal block of the assembled NTK: gamma/M * theta_com_same + theta_ind_same.
Eigen::MatrixXd theta_same_total(const LayerKernels& k, int n_models, GammaMode mode, double gamma_value = 1.0);

}  // namespace embens
