#include "embens/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace embens {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void BlockKernel::validate() const {
  const Eigen::Index ntr = static_cast<Eigen::Index>(n_models) * n_train;
  if (n_models < 1 || n_train < 1) throw ConfigError("BlockKernel: need n_models >= 1 and n_train >= 1");
  if (train_train.rows() != ntr || train_train.cols() != ntr) throw ConfigError("BlockKernel: train block shape");
  if (n_test > 0 && (test_train.rows() != static_cast<Eigen::Index>(n_models) * n_test || test_train.cols() != ntr)) {
    throw ConfigError("BlockKernel: test block shape");
  }
  if (!(batch_size > 0.0)) throw ConfigError("BlockKernel: batch_size must be > 0");
}

BlockKernel split_kernel(const MatrixXd& full, int n_models, int n_train, int n_test, double batch_size) {
  const int np = n_train + n_test;
  if (full.rows() != static_cast<Eigen::Index>(n_models) * np || full.cols() != full.rows()) {
    throw ConfigError("split_kernel: kernel shape does not match model/point counts");
  }
  auto tr = [&](int a, int i) { return a * np + i; };
  auto te = [&](int a, int i) { return a * np + n_train + i; };
  BlockKernel k;
  k.n_models = n_models;
  k.n_train = n_train;
  k.n_test = n_test;
  k.batch_size = batch_size;
  k.train_train.resize(n_models * n_train, n_models * n_train);
  k.test_train.resize(n_models * n_test, n_models * n_train);
  for (int a = 0; a < n_models; ++a) {
    for (int b = 0; b < n_models; ++b) {
      for (int i = 0; i < n_train; ++i) {
        for (int j = 0; j < n_train; ++j) k.train_train(a * n_train + i, b * n_train + j) = full(tr(a, i), tr(b, j));
      }
      for (int i = 0; i < n_test; ++i) {
        for (int j = 0; j < n_train; ++j) k.test_train(a * n_test + i, b * n_train + j) = full(te(a, i), tr(b, j));
      }
    }
  }
  return k;
}

MatrixXd gp_sample_outputs(const MatrixXd& cov, int n_classes, Seed seed) {
  if (cov.rows() != cov.cols()) throw ConfigError("gp_sample_outputs: covariance must be square");
  if (n_classes < 1) throw ConfigError("gp_sample_outputs: n_classes must be >= 1");
  const Eigen::Index dim = cov.rows();
  MatrixXd out = MatrixXd::Zero(dim, n_classes);
  const double trace = cov.trace();
  if (dim == 0 || trace == 0.0) return out;
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * trace / static_cast<double>(dim);
    llt.compute(cov + jitter * MatrixXd::Identity(dim, dim));
    if (llt.info() != Eigen::Success) throw NumericalError("gp_sample_outputs: covariance is not PSD");
  }
  Rng rng(seed);
  MatrixXd z(dim, n_classes);
  rng.fill_normal(z);
  out = llt.matrixL() * z;
  return out;
}

namespace {

MatrixXd repeat_targets(const MatrixXd& y, int n_models) {
  MatrixXd out(y.rows() * n_models, y.cols());
  for (int a = 0; a < n_models; ++a) out.middleRows(a * y.rows(), y.rows()) = y;
  return out;
}

void check_mse_shapes(const BlockKernel& k, const MatrixXd& f0_train, const MatrixXd& y) {
  k.validate();
  if (f0_train.rows() != k.train_train.rows()) throw ConfigError("dynamics: f0_train rows must be M * n_train");
  if (y.rows() != k.n_train || y.cols() != f0_train.cols()) throw ConfigError("dynamics: targets must be n_train x C");
}

// Gradient of the per-point loss w.r.t. outputs, (M n_tr) x C.
MatrixXd loss_grad(const MatrixXd& f, const DynamicsTargets& y, LossKind kind, int n_models, int n_train) {
  if (kind == LossKind::mse) return f - repeat_targets(y.values, n_models);
  MatrixXd g(f.rows(), f.cols());
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    const double mx = f.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (f.row(r).array() - mx).exp().matrix();
    g.row(r) = e / e.sum();
    g(r, y.labels[r % n_train]) -= 1.0;
  }
  return g;
}

}  // namespace

MatrixXd mse_closed_form(const BlockKernel& k, const MatrixXd& f0_train, const MatrixXd& y, double t) {
  check_mse_shapes(k, f0_train, y);
  if (t < 0.0) throw ConfigError("mse_closed_form: t must be >= 0");
  const MatrixXd yy = repeat_targets(y, k.n_models);
  if (t == 0.0) return f0_train;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k.train_train);
  const VectorXd decay = (-es.eigenvalues().cwiseMax(0.0) * (t / k.batch_size)).array().exp().matrix();
  const MatrixXd& v = es.eigenvectors();
  return yy + v * decay.asDiagonal() * (v.transpose() * (f0_train - yy));
}

MatrixXd mse_test_prediction(const BlockKernel& k, const MatrixXd& f0_train, const MatrixXd& f0_test,
                             const MatrixXd& y, double t) {
  check_mse_shapes(k, f0_train, y);
  if (f0_test.rows() != k.test_train.rows()) throw ConfigError("mse_test_prediction: f0_test rows must be M * n_test");
  if (t == 0.0) return f0_test;
  const MatrixXd yy = repeat_targets(y, k.n_models);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k.train_train);
  const VectorXd& lam = es.eigenvalues();
  const double cutoff = 1e-10 * std::max(lam.maxCoeff(), 0.0);
  VectorXd g(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    // (1 - exp(-lambda t / B)) / lambda, dropping the numerical null space.
    g[i] = lam[i] > cutoff ? -std::expm1(-lam[i] * t / k.batch_size) / lam[i] : 0.0;
  }
  const MatrixXd& v = es.eigenvectors();
  return f0_test - k.test_train * (v * g.asDiagonal() * (v.transpose() * (f0_train - yy)));
}

double dynamics_train_loss(const MatrixXd& f_train, const DynamicsTargets& y, LossKind kind, int n_models) {
  const Eigen::Index n = f_train.rows() / n_models;
  double total = 0.0;
  for (int a = 0; a < n_models; ++a) {
    Batch b;
    b.targets = y.values;
    b.labels = y.labels;
    total += batch_loss(f_train.middleRows(a * n, n), b, kind);
  }
  return total;
}

Trajectory ode_integrate(const BlockKernel& k, const MatrixXd& f0_train, const MatrixXd& f0_test,
                         const DynamicsTargets& y, LossKind kind, double t_end, double dt,
                         std::vector<double> record) {
  k.validate();
  if (!(dt > 0.0)) throw ConfigError("ode_integrate: dt must be > 0");
  if (t_end < 0.0) throw ConfigError("ode_integrate: t_end must be >= 0");
  if (f0_train.rows() != k.train_train.rows()) throw ConfigError("ode_integrate: f0_train rows must be M * n_train");
  if (k.n_test > 0 && f0_test.rows() != k.test_train.rows()) {
    throw ConfigError("ode_integrate: f0_test rows must be M * n_test");
  }
  if (kind == LossKind::mse && (y.values.rows() != k.n_train || y.values.cols() != f0_train.cols())) {
    throw ConfigError("ode_integrate: MSE targets must be n_train x C");
  }
  if (kind == LossKind::cross_entropy) {
    if (static_cast<int>(y.labels.size()) != k.n_train) throw ConfigError("ode_integrate: need n_train labels");
    for (int c : y.labels) {
      if (c < 0 || c >= f0_train.cols()) throw ConfigError("ode_integrate: label out of range");
    }
  }
  record.push_back(t_end);
  std::sort(record.begin(), record.end());
  record.erase(std::unique(record.begin(), record.end()), record.end());
  for (double r : record) {
    if (r < 0.0 || r > t_end) throw ConfigError("ode_integrate: record times must lie in [0, t_end]");
  }

  const double scale = 1.0 / k.batch_size;
  const bool has_test = k.n_test > 0;
  auto rhs = [&](const MatrixXd& f, MatrixXd& d_train, MatrixXd& d_test) {
    const MatrixXd g = loss_grad(f, y, kind, k.n_models, k.n_train);
    d_train.noalias() = -scale * (k.train_train * g);
    if (has_test) d_test.noalias() = -scale * (k.test_train * g);
  };

  Trajectory tr;
  MatrixXd f = f0_train;
  MatrixXd ft = has_test ? f0_test : MatrixXd();
  MatrixXd k1, k2, k3, k4, t1, t2, t3, t4;
  double t = 0.0;
  for (double target : record) {
    const double span = target - t;
    const long steps = span > 0.0 ? static_cast<long>(std::ceil(span / dt - 1e-9)) : 0;
    const double h = steps > 0 ? span / static_cast<double>(steps) : 0.0;
    for (long s = 0; s < steps; ++s) {
      rhs(f, k1, t1);
      rhs(f + 0.5 * h * k1, k2, t2);
      rhs(f + 0.5 * h * k2, k3, t3);
      rhs(f + h * k3, k4, t4);
      f += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (has_test) ft += (h / 6.0) * (t1 + 2.0 * t2 + 2.0 * t3 + t4);
      if (!f.allFinite()) throw NumericalError("ode_integrate: state became non-finite");
    }
    t = target;
    tr.times.push_back(t);
    tr.train.push_back(f);
    tr.test.push_back(ft);
  }
  return tr;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& tr, int n_models) {
  os << "t,model,point,class,value\n";
  os.precision(17);
  for (std::size_t s = 0; s < tr.times.size(); ++s) {
    const MatrixXd& f = tr.train[s];
    const MatrixXd& g = tr.test[s];
    const Eigen::Index ntr = f.rows() / n_models;
    const Eigen::Index nte = g.size() > 0 ? g.rows() / n_models : 0;
    for (int a = 0; a < n_models; ++a) {
      for (Eigen::Index i = 0; i < ntr; ++i) {
        for (Eigen::Index c = 0; c < f.cols(); ++c) {
          os << tr.times[s] << ',' << a << ',' << i << ',' << c << ',' << f(a * ntr + i, c) << '\n';
        }
      }
      for (Eigen::Index i = 0; i < nte; ++i) {
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
          os << tr.times[s] << ',' << a << ',' << ntr + i << ',' << c << ',' << g(a * nte + i, c) << '\n';
        }
      }
    }
  }
}

}  // namespace embens
