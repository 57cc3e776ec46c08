#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "embens/ensemble_net.hpp"
#include "embens/numerics.hpp"

namespace embens {

/// Blocks of an assembled ensemble NTK. Rows and columns are ordered
/// model-major: index alpha * n_points + i.
struct BlockKernel {
  Eigen::MatrixXd train_train;  // (M n_tr) x (M n_tr)
  Eigen::MatrixXd test_train;   // (M n_te) x (M n_tr), may be empty
  int n_models = 1;
  int n_train = 0;
  int n_test = 0;
  double batch_size = 1.0;  // B in the 1/B of the mean-reduced loss

  void validate() const;
};

/// Splits a full (M (n_tr + n_te))-square kernel, whose per-model blocks list
/// the n_tr train points first, into a BlockKernel.
BlockKernel split_kernel(const Eigen::MatrixXd& full, int n_models, int n_train, int n_test, double batch_size);

/// Per-train-point targets: real targets (n_tr x C) for MSE, labels for CE.
struct DynamicsTargets {
  Eigen::MatrixXd values;
  std::vector<int> labels;
};

/// Zero-mean Gaussian draw with covariance `cov`, independent per class
/// channel. Returns dim x n_classes.
Eigen::MatrixXd gp_sample_outputs(const Eigen::MatrixXd& cov, int n_classes, Seed seed);

/// Train outputs at time t under MSE gradient flow:
/// f_t = y + exp(-Theta t / B) (f_0 - y), with y repeated for every model.
Eigen::MatrixXd mse_closed_form(const BlockKernel& k, const Eigen::MatrixXd& f0_train, const Eigen::MatrixXd& y,
                                double t);

/// Test outputs at time t: f_0 - Theta_te,tr Theta_tr^+ (I - exp(-Theta_tr t / B)) (f0_train - y).
Eigen::MatrixXd mse_test_prediction(const BlockKernel& k, const Eigen::MatrixXd& f0_train,
                                    const Eigen::MatrixXd& f0_test, const Eigen::MatrixXd& y, double t);

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> train;  // (M n_tr) x C per recorded time
  std::vector<Eigen::MatrixXd> test;   // (M n_te) x C per recorded time
};

/// RK4 on df/dt = -(1/B) Theta dL/df, class-diagonal kernel. `record` lists
/// times in [0, t_end] at which the state is stored; t_end is always stored.
Trajectory ode_integrate(const BlockKernel& k, const Eigen::MatrixXd& f0_train, const Eigen::MatrixXd& f0_test,
                         const DynamicsTargets& y, LossKind kind, double t_end, double dt,
                         std::vector<double> record = {});

/// Sum over models of the mean per-point loss on the train outputs.
double dynamics_train_loss(const Eigen::MatrixXd& f_train, const DynamicsTargets& y, LossKind kind, int n_models);

/// CSV with header t,model,point,class,value. Test points are numbered after
/// the train points.
void write_trajectory_csv(std::ostream& os, const Trajectory& tr, int n_models);

}  // namespace embens
