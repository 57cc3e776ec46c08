#include "embens/numerics.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include <Eigen/Eigenvalues>

namespace embens {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Normalized probabilists' Hermite recurrence: psi_n = He_n / sqrt(n!).
// Returns (psi_n(x), psi_{n-1}(x)).
std::pair<double, double> hermite_pair(int n, double x) {
  double prev = 0.0;
  double cur = 1.0;
  for (int k = 0; k < n; ++k) {
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) /
                        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  return {cur, prev};
}

QuadratureRule build_rule(int n) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  if (n == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = 1.0;
    return rule;
  }
  // Golub-Welsch start, Newton polish on the normalized recurrence.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n - 1);
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i) {
    double x = es.eigenvalues()[i];
    for (int it = 0; it < 4; ++it) {
      auto [pn, pn1] = hermite_pair(n, x);
      x -= pn / (sqrt_n * pn1);
    }
    rule.nodes[i] = x;
  }
  // Enforce exact symmetry about zero.
  for (int i = 0; i < n / 2; ++i) {
    const double a = 0.5 * (rule.nodes[n - 1 - i] - rule.nodes[i]);
    rule.nodes[i] = -a;
    rule.nodes[n - 1 - i] = a;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double pn1 = hermite_pair(n - 1, rule.nodes[i]).first;
    rule.weights[i] = 1.0 / (n * pn1 * pn1);
    total += rule.weights[i];
  }
  for (auto& w : rule.weights) w /= total;
  return rule;
}

}  // namespace

Seed split_rng(Seed seed, std::uint64_t child_id) {
  const std::uint64_t mixed =
      splitmix64(seed.stream ^ splitmix64(child_id + 0x632be59bd9b4e019ULL));
  return {seed.root, splitmix64(mixed ^ (seed.root * 0xd6e8feb86659fd93ULL))};
}

Rng::Rng(Seed seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed.root), static_cast<std::uint32_t>(seed.root >> 32),
                    static_cast<std::uint32_t>(seed.stream), static_cast<std::uint32_t>(seed.stream >> 32)};
  engine_.seed(seq);
}

void Rng::fill_normal(Eigen::Ref<Eigen::MatrixXd> m, double stddev) {
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * normal_(engine_);
  }
}

void check_psd(const Cov2& c) {
  if (!(c.s11 >= 0.0) || !(c.s22 >= 0.0) || !std::isfinite(c.s12)) {
    throw NumericalError("Cov2: negative or non-finite variance");
  }
  if (c.s12 * c.s12 > c.s11 * c.s22 * (1.0 + 1e-9)) {
    throw NumericalError("Cov2: not positive semidefinite (s12^2 > s11*s22)");
  }
}

Chol2 cholesky2(const Cov2& c) {
  check_psd(c);
  Chol2 l;
  l.l11 = std::sqrt(c.s11);
  l.l21 = l.l11 > 0.0 ? c.s12 / l.l11 : 0.0;
  l.l22 = std::sqrt(std::max(0.0, c.s22 - l.l21 * l.l21));
  return l;
}

const QuadratureRule& gauss_hermite(int n) {
  if (n < 1) throw ConfigError("gauss_hermite: n must be >= 1");
  static std::mutex mu;
  static std::map<int, std::unique_ptr<QuadratureRule>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<QuadratureRule>(build_rule(n));
  return *slot;
}

namespace {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights are
// mass * (first eigenvector component)^2.
QuadratureRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& off, double mass) {
  const Eigen::Index n = diag.size();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  j.diagonal() = diag;
  for (Eigen::Index i = 0; i + 1 < n; ++i) j(i, i + 1) = j(i + 1, i) = off[i];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  QuadratureRule r;
  for (Eigen::Index i = 0; i < n; ++i) {
    r.nodes.push_back(es.eigenvalues()[i]);
    r.weights.push_back(mass * es.eigenvectors()(0, i) * es.eigenvectors()(0, i));
  }
  return r;
}

QuadratureRule build_legendre(int n) {
  Eigen::VectorXd off(std::max(0, n - 1));
  for (int k = 1; k < n; ++k) off[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
  QuadratureRule r = golub_welsch(Eigen::VectorXd::Zero(n), off, 2.0);
  // Symmetrize as for Hermite.
  for (int i = 0; i < n / 2; ++i) {
    const double a = 0.5 * (r.nodes[n - 1 - i] - r.nodes[i]);
    const double w = 0.5 * (r.weights[i] + r.weights[n - 1 - i]);
    r.nodes[i] = -a;
    r.nodes[n - 1 - i] = a;
    r.weights[i] = r.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) r.nodes[n / 2] = 0.0;
  return r;
}

QuadratureRule build_laguerre(int n) {
  Eigen::VectorXd diag(n), off(std::max(0, n - 1));
  for (int k = 0; k < n; ++k) diag[k] = 2.0 * k + 1.0;
  for (int k = 1; k < n; ++k) off[k - 1] = k;
  return golub_welsch(diag, off, 1.0);
}

template <class Build>
const QuadratureRule& cached(std::map<int, std::unique_ptr<QuadratureRule>>& cache, std::mutex& mu, int n,
                             Build build) {
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<QuadratureRule>(build(n));
  return *slot;
}

}  // namespace

const QuadratureRule& gauss_legendre(int n) {
  if (n < 1) throw ConfigError("gauss_legendre: n must be >= 1");
  static std::mutex mu;
  static std::map<int, std::unique_ptr<QuadratureRule>> cache;
  return cached(cache, mu, n, build_legendre);
}

const QuadratureRule& gauss_laguerre(int n) {
  if (n < 1) throw ConfigError("gauss_laguerre: n must be >= 1");
  static std::mutex mu;
  static std::map<int, std::unique_ptr<QuadratureRule>> cache;
  return cached(cache, mu, n, build_laguerre);
}

std::vector<GridPoint> kinked_grid(const Cov2& c, const QuadratureSpec& q) {
  const Chol2 l = cholesky2(c);
  const double pi = std::numbers::pi;
  // Lines through the origin of the whitened plane where z1 or z2 vanish,
  // as angles in [0, pi).
  std::vector<double> cuts = {0.0, pi};
  if (l.l11 > 0.0) cuts.push_back(0.5 * pi);
  if (l.l21 != 0.0 || l.l22 != 0.0) {
    double t = std::fmod(std::atan2(l.l21, -l.l22), pi);
    if (t < 0.0) t += pi;
    cuts.push_back(t);
  }
  std::sort(cuts.begin(), cuts.end());

  const QuadratureRule& ang = gauss_legendre(std::max(2, q.nodes_per_dim / 2));
  const QuadratureRule& rad = gauss_laguerre(std::max(2, q.nodes_per_dim / 4));
  std::vector<GridPoint> pts;
  pts.reserve(2 * (cuts.size() - 1) * ang.nodes.size() * rad.nodes.size());
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    if (b - a < 1e-15) continue;
    for (std::size_t i = 0; i < ang.nodes.size(); ++i) {
      const double t = 0.5 * (a + b) + 0.5 * (b - a) * ang.nodes[i];
      const double wa = 0.5 * (b - a) * ang.weights[i] / (2.0 * pi);
      const double ct = std::cos(t), st = std::sin(t);
      for (std::size_t j = 0; j < rad.nodes.size(); ++j) {
        const double r = std::sqrt(2.0 * rad.nodes[j]);
        const double z1 = l.l11 * r * ct;
        const double z2 = (l.l21 * ct + l.l22 * st) * r;
        const double w = wa * rad.weights[j];
        pts.push_back({z1, z2, w});
        pts.push_back({-z1, -z2, w});
      }
    }
  }
  return pts;
}

std::vector<GridPoint> bivariate_grid(const Cov2& c, const QuadratureSpec& q) {
  check_psd(c);
  const QuadratureRule& rule = gauss_hermite(q.nodes_per_dim);
  const int n = q.nodes_per_dim;
  std::vector<GridPoint> pts;
  const double scale = c.s11 * c.s22;
  if (scale == 0.0 || c.det() < q.degenerate_eps * scale) {
    // Rank <= 1: both coordinates are multiples of one standard normal.
    const double a = std::sqrt(c.s11);
    const double b = (c.s12 < 0.0 ? -1.0 : 1.0) * std::sqrt(c.s22);
    pts.reserve(n);
    for (int i = 0; i < n; ++i) pts.push_back({a * rule.nodes[i], b * rule.nodes[i], rule.weights[i]});
    return pts;
  }
  const Chol2 l = cholesky2(c);
  pts.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const double z1 = l.l11 * rule.nodes[i];
    const double base = l.l21 * rule.nodes[i];
    for (int j = 0; j < n; ++j) {
      pts.push_back({z1, base + l.l22 * rule.nodes[j], rule.weights[i] * rule.weights[j]});
    }
  }
  return pts;
}

double min_eigenvalue(const Eigen::MatrixXd& sym) {
  if (sym.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

bool is_psd(const Eigen::MatrixXd& sym, double rel_tol) {
  if (sym.size() == 0) return true;
  const double dim = static_cast<double>(sym.rows());
  return min_eigenvalue(sym) >= -rel_tol * std::abs(sym.trace()) / dim;
}

Eigen::MatrixXd pairwise_sum(const std::vector<Eigen::MatrixXd>& terms) {
  if (terms.empty()) return {};
  std::vector<Eigen::MatrixXd> level = terms;
  while (level.size() > 1) {
    std::vector<Eigen::MatrixXd> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) next.push_back(level[i] + level[i + 1]);
    if (level.size() % 2 == 1) next.push_back(std::move(level.back()));
    level = std::move(next);
  }
  return std::move(level.front());
}

}  // namespace embens
