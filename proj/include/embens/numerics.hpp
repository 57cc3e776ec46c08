#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "embens/errors.hpp"

namespace embens {

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Identifies a deterministic random stream. Streams are passed by value and
/// forked with split_rng; nothing holds shared mutable generator state.
struct Seed {
  std::uint64_t root = 0;
  std::uint64_t stream = 0;

  friend bool operator==(const Seed&, const Seed&) = default;
};

/// Derives the child stream `child_id` of `seed`. Pure function.
Seed split_rng(Seed seed, std::uint64_t child_id);

/// Generator bound to one Seed.
class Rng {
 public:
  explicit Rng(Seed seed);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  void fill_normal(Eigen::Ref<Eigen::MatrixXd> m, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// 2x2 covariances
// ---------------------------------------------------------------------------

struct Cov2 {
  double s11 = 1.0;
  double s12 = 0.0;
  double s22 = 1.0;

  double det() const { return s11 * s22 - s12 * s12; }
  Cov2 swapped() const { return {s22, s12, s11}; }
};

/// Lower-triangular factor stored as (l11, l21, l22).
struct Chol2 {
  double l11 = 0.0;
  double l21 = 0.0;
  double l22 = 0.0;
};

/// Throws NumericalError unless `c` is PSD (with 1e-9 relative slack on the
/// Cauchy-Schwarz bound).
void check_psd(const Cov2& c);

Chol2 cholesky2(const Cov2& c);

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (probabilists' weight, unit total mass)
// ---------------------------------------------------------------------------

struct QuadratureSpec {
  int nodes_per_dim = 64;
  double degenerate_eps = 1e-12;
};

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Nodes and weights with sum(weights) == 1 for E[g(Z)], Z ~ N(0,1).
/// Rules are cached; the returned reference stays valid for the process.
const QuadratureRule& gauss_hermite(int n);

/// One point of a bivariate tensor-product rule, in original (z1, z2) units.
struct GridPoint {
  double z1;
  double z2;
  double w;
};

/// Whitened tensor-product grid for N(0, c). Uses a 1D rule along the rank-1
/// direction when det(c) < degenerate_eps * s11 * s22.
std::vector<GridPoint> bivariate_grid(const Cov2& c, const QuadratureSpec& q);

/// Gauss-Legendre on [-1, 1] (weights sum to 2) and Gauss-Laguerre for
/// weight e^{-s} on [0, inf) (weights sum to 1). Cached like gauss_hermite.
const QuadratureRule& gauss_legendre(int n);
const QuadratureRule& gauss_laguerre(int n);

/// Polar rule for N(0, c) whose angular range is split where z1 = 0 or
/// z2 = 0, for integrands that are smooth away from the coordinate axes
/// (ReLU and its step derivative). Uses nodes_per_dim / 2 Legendre nodes per
/// arc and nodes_per_dim / 4 Laguerre nodes in r^2 / 2; points come in +/-
/// pairs. Exact up to rounding for integrands homogeneous of even degree on
/// each sector.
std::vector<GridPoint> kinked_grid(const Cov2& c, const QuadratureSpec& q);

template <class F>
double expect_on_grid(F&& g, const std::vector<GridPoint>& grid) {
  double acc = 0.0;
  for (const auto& p : grid) {
    const double v = g(p.z1, p.z2);
    if (!std::isfinite(v)) {
      throw EvaluationError("expect_bivariate: integrand is not finite at grid point");
    }
    acc += p.w * v;
  }
  return acc;
}

/// E[g(z1, z2)] for (z1, z2) ~ N(0, c).
template <class F>
double expect_bivariate(F&& g, const Cov2& c, const QuadratureSpec& q = {}) {
  return expect_on_grid(g, bivariate_grid(c, q));
}

/// As expect_bivariate, on kinked_grid.
template <class F>
double expect_bivariate_kinked(F&& g, const Cov2& c, const QuadratureSpec& q = {}) {
  return expect_on_grid(g, kinked_grid(c, q));
}

// ---------------------------------------------------------------------------
// Small dense helpers
// ---------------------------------------------------------------------------

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::MatrixXd& sym);

/// True when the smallest eigenvalue is >= -rel_tol * trace / dim.
bool is_psd(const Eigen::MatrixXd& sym, double rel_tol = 1e-8);

/// Sums matrices by pairwise (tree) reduction. Summing 2^k identical
/// matrices is exact.
Eigen::MatrixXd pairwise_sum(const std::vector<Eigen::MatrixXd>& terms);

}  // namespace embens
