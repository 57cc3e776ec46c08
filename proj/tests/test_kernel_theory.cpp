#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "embens/kernel_theory.hpp"
#include "oracles.hpp"

using namespace embens;
using Eigen::MatrixXd;

namespace {

const double kPi = std::numbers::pi;

MatrixXd sample_inputs(int n, int d, std::uint64_t seed, bool positive = false) {
  Rng rng(Seed{seed, 0});
  MatrixXd x(n, d);
  rng.fill_normal(x);
  if (positive) x = x.cwiseAbs();
  return x;
}

ArchSpec arch_with(Activation act, std::vector<int> widths, std::optional<ModulationSpec> pre,
                   std::optional<ModulationSpec> post, int in = 3) {
  return make_mlp(in, widths, 1, act, 2, pre, post);
}

double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Moments, Families) {
  auto m = moments(ModulationSpec::gaussian(0, 1));
  EXPECT_DOUBLE_EQ(m.m1, 0);
  EXPECT_DOUBLE_EQ(m.m2, 1);
  for (double p : {-1.0, -0.3, 0.0, 0.5, 1.0}) {
    m = moments(ModulationSpec::shifted(p));
    EXPECT_DOUBLE_EQ(m.m1, p);
    EXPECT_NEAR(m.m2, 1.0, 1e-15);
  }
  m = moments(ModulationSpec::ternary(0.3));
  EXPECT_NEAR(m.m1, 0, 1e-16);
  EXPECT_NEAR(m.m2, 0.3, 1e-16);
  m = moments(std::optional<ModulationSpec>{});
  EXPECT_EQ(m.m1, 1);
  EXPECT_EQ(m.m2, 1);
  EXPECT_FALSE(m.trainable);
  EXPECT_TRUE(moments(ModulationSpec::bernoulli(0.5, true)).trainable);
}

TEST(PhiExpect, HandValues) {
  const auto one = ModulationSpec::deterministic(1.0);
  const auto same = PairMode::same_model;
  const Cov2 c{1.3, 0.4, 0.7};
  EXPECT_NEAR(phi_expect(Activation::identity, c, one, same), 0.4, 1e-13);
  EXPECT_NEAR(phi_expect(Activation::relu, {1, 0, 1}, one, same), 1 / (2 * kPi), 1e-13);
  EXPECT_NEAR(phi_expect(Activation::relu, {1, 1, 1}, one, same), 0.5, 1e-13);
  EXPECT_NEAR(phid_expect(Activation::identity, c, one, same), 1.0, 1e-13);
  EXPECT_NEAR(phid_expect(Activation::relu, {1, 0, 1}, one, same), 0.25, 1e-13);
  EXPECT_NEAR(phid_expect(Activation::relu, {1, 0.5, 1}, one, same), (kPi - std::acos(0.5)) / (2 * kPi), 1e-13);
  EXPECT_NEAR(phid_expect(Activation::relu, {1, 0.5, 1}, one, same), 1.0 / 3.0, 1e-13);
  EXPECT_NEAR(phiz_expect(Activation::identity, c, one, same), 0.4, 1e-13);
  EXPECT_NEAR(phiz_expect(Activation::relu, {1, 0, 1}, one, same), 1 / (2 * kPi), 1e-13);
  EXPECT_NEAR(phiz_expect(Activation::relu, {1, 1, 1}, one, same), 0.5, 1e-13);
}

TEST(PhiExpect, RejectsNonPsd) {
  EXPECT_THROW(phi_expect(Activation::relu, {1, 2, 1}, ModulationSpec::deterministic(1), PairMode::same_model),
               NumericalError);
}

TEST(PhiExpect, ModesAgreeForConstantModulation) {
  const auto v = ModulationSpec::deterministic(0.7);
  const Cov2 c{1.2, 0.3, 0.9};
  for (Activation a : {Activation::relu, Activation::sigmoid, Activation::erf}) {
    const auto s = pair_expectations(a, c, v, PairMode::same_model);
    const auto d = pair_expectations(a, c, v, PairMode::diff_model);
    EXPECT_NEAR(s.phi, d.phi, 1e-14);
    EXPECT_NEAR(s.phid, d.phid, 1e-14);
    EXPECT_NEAR(s.vphid, 0.49 * s.phid, 1e-14);
  }
}

TEST(PhiExpect, MatchesMonteCarloWithModulations) {
  const Cov2 c{1.1, 0.6, 0.9};
  std::uint64_t seed = 100;
  for (Activation a : {Activation::relu, Activation::sigmoid}) {
    for (const auto& v : {ModulationSpec::shifted(0.5), ModulationSpec::ternary(0.6)}) {
      for (bool same : {true, false}) {
        const auto mode = same ? PairMode::same_model : PairMode::diff_model;
        const auto e = pair_expectations(a, c, v, mode);
        const double got[] = {e.phi, e.phid, e.phiz};
        const oracle::PairQuantity qs[] = {oracle::PairQuantity::phi, oracle::PairQuantity::phid,
                                           oracle::PairQuantity::phiz};
        for (int k = 0; k < 3; ++k) {
          const auto mc = oracle::mc_pair(a, c.s11, c.s12, c.s22, v, same, qs[k], 1'000'000, ++seed);
          EXPECT_NEAR(got[k], mc.mean, 4 * mc.stderr_ + 1e-12)
              << to_string(a) << " same=" << same << " k=" << k;
        }
      }
    }
  }
}

TEST(PhiExpect, ReluClosedFormAgreesWithQuadrature) {
  KernelOptions fast;
  fast.relu_closed_form = true;
  for (double v : {1.0, 0.5, -1.3}) {
    for (Cov2 c : {Cov2{1, 0.5, 1}, Cov2{2, -1.2, 0.9}, Cov2{1, 1, 1}, Cov2{0.5, 0, 3}}) {
      const auto spec = ModulationSpec::deterministic(v);
      const auto q = pair_expectations(Activation::relu, c, spec, PairMode::same_model);
      const auto f = pair_expectations(Activation::relu, c, spec, PairMode::same_model, fast);
      // The fast path clamps |rho| to 1 - 1e-12, which moves arccos by ~1.4e-6.
      const bool edge = std::abs(c.s12 * c.s12 - c.s11 * c.s22) < 1e-12;
      const double tol = edge ? 1e-6 : 1e-10;
      EXPECT_NEAR(q.phi, f.phi, tol);
      EXPECT_NEAR(q.phid, f.phid, tol);
      EXPECT_NEAR(q.vphid, f.vphid, tol);
      EXPECT_NEAR(q.phiz, f.phiz, tol);
    }
  }
}

TEST(SigmaInit, HandValues) {
  MatrixXd x(2, 2);
  x << 1, 0, 0, 1;
  EXPECT_EQ(sigma_init(x, 2).sigma_same(0, 1), 0.0);
  x << 1, 1, 1, 1;
  EXPECT_DOUBLE_EQ(sigma_init(x, 2).sigma_same(0, 1), 1.0);
}

TEST(SigmaInit, MatchesFiniteLayerOneCovariance) {
  const MatrixXd x = sample_inputs(2, 3, 4);
  const ArchSpec a = make_mlp(3, {16}, 1, Activation::relu, 1, std::nullopt, std::nullopt);
  double s01 = 0, s01sq = 0;
  long count = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto p = init_params(a, Seed{s, 77});
    const auto tape = forward_model(p, a, 0, x);
    for (int j = 0; j < 16; ++j) {
      const double v = tape.z[1](0, j) * tape.z[1](1, j);
      s01 += v;
      s01sq += v * v;
      ++count;
    }
  }
  const double mean = s01 / count;
  const double se = std::sqrt((s01sq / count - mean * mean) / (count - 1));
  EXPECT_NEAR(mean, sigma_init(x, 3).sigma_same(0, 1), 3 * se);
}

TEST(SigmaStep, CenteredPostModsKillCrossModelCovariance) {
  const auto k0 = sigma_init(sample_inputs(4, 3, 1, true), 3);
  for (const auto& u : {ModulationSpec::gaussian(0, 1), ModulationSpec::ternary(0.5)}) {
    const auto k = sigma_step(k0, moments(u), ModulationSpec::shifted(0.5), Activation::relu);
    EXPECT_EQ(max_abs(k.sigma_diff), 0.0);
    EXPECT_GT(k.sigma_same.diagonal().minCoeff(), 0.0);
  }
}

TEST(SigmaStep, IdentityFixedPoint) {
  const auto k0 = sigma_init(sample_inputs(4, 3, 2), 3);
  const auto k = sigma_step(k0, ModulationMoments{}, ModulationSpec::deterministic(1), Activation::identity);
  EXPECT_LT(max_abs(k.sigma_same - k0.sigma_same), 1e-13);
}

TEST(Recursion, LinearNetworkExact) {
  const MatrixXd x = sample_inputs(5, 4, 3);
  const MatrixXd g = x * x.transpose() / 4.0;
  for (int depth : {1, 2, 3}) {
    const ArchSpec a = arch_with(Activation::identity, std::vector<int>(depth, 8),
                                 ModulationSpec::deterministic(1), ModulationSpec::deterministic(1), 4);
    const auto ks = run_recursion(a, x);
    ASSERT_EQ(static_cast<int>(ks.size()), depth + 1);
    EXPECT_LT(max_abs(ks.back().sigma_same - g), 1e-10);
    EXPECT_LT(max_abs(ks.back().theta_com_same - (depth + 1) * g), 1e-10);
    EXPECT_EQ(max_abs(ks.back().theta_ind_same), 0.0);
  }
}

TEST(Recursion, McDropoutHasNoIndividualKernel) {
  const ArchSpec a =
      arch_with(Activation::relu, {8, 8}, ModulationSpec::bernoulli(0.8), ModulationSpec::bernoulli(0.5));
  for (const auto& k : run_recursion(a, sample_inputs(3, 3, 4))) EXPECT_EQ(max_abs(k.theta_ind_same), 0.0);
}

TEST(Recursion, TrainableModulationsAddIndividualKernel) {
  const ArchSpec a = arch_with(Activation::relu, {8}, ModulationSpec::gaussian(1, 0.2, true),
                               ModulationSpec::gaussian(0, 1, true));
  const auto ks = run_recursion(a, sample_inputs(3, 3, 5, true));
  EXPECT_GT(ks.back().theta_ind_same.diagonal().minCoeff(), 0.0);
}

TEST(Recursion, IndependenceTheorem) {
  const MatrixXd x = sample_inputs(5, 3, 6, true);
  std::vector<ArchSpec> battery = {
      arch_with(Activation::relu, {8, 8}, std::nullopt, ModulationSpec::gaussian(0, 1)),
      arch_with(Activation::relu, {8}, ModulationSpec::gaussian(0, 1, true), ModulationSpec::gaussian(0, 1, true)),
      arch_with(Activation::sigmoid, {8, 8, 8}, ModulationSpec::ternary(0.5), ModulationSpec::ternary(0.5)),
      arch_with(Activation::erf, {8, 8}, ModulationSpec::shifted(0.6), ModulationSpec::gaussian(0, 2)),
  };
  // Only the last hidden layer's post-modulation needs to be centered.
  ArchSpec mixed = arch_with(Activation::relu, {8, 8}, std::nullopt, ModulationSpec::shifted(0.7));
  mixed.layers.back().post_mod = ModulationSpec::ternary(0.8);
  battery.push_back(mixed);
  for (const auto& a : battery) {
    const LayerKernels out = run_recursion(a, x).back();
    EXPECT_LE(max_abs(out.sigma_diff), 1e-10);
    EXPECT_LE(max_abs(out.theta_com_diff), 1e-10);
  }
}

TEST(Recursion, BreakdownTheorem) {
  const MatrixXd x = sample_inputs(4, 3, 7, true);
  for (int depth : {1, 2, 3}) {
    const ArchSpec a = arch_with(Activation::relu, std::vector<int>(depth, 8), ModulationSpec::shifted(0.5),
                                 ModulationSpec::shifted(0.5));
    const LayerKernels out = run_recursion(a, x).back();
    EXPECT_GT(out.sigma_diff.minCoeff(), 1e-6);
    EXPECT_GT(out.theta_com_diff.minCoeff(), 1e-6);
  }
}

TEST(Recursion, SymmetricAndMonotoneInNodes) {
  const MatrixXd x = sample_inputs(4, 3, 8);
  const ArchSpec a =
      arch_with(Activation::sigmoid, {8, 8}, ModulationSpec::shifted(0.4), ModulationSpec::gaussian(0.2, 1, true));
  KernelOptions ref;
  ref.quad.nodes_per_dim = 128;
  const auto exact = run_recursion(a, x, ref).back();
  double prev = INFINITY;
  for (int n : {8, 16, 32, 64}) {
    KernelOptions o;
    o.quad.nodes_per_dim = n;
    const auto k = run_recursion(a, x, o).back();
    EXPECT_LT(max_abs(k.theta_com_same - k.theta_com_same.transpose()), 1e-14);
    const double err = std::max(max_abs(k.theta_com_same - exact.theta_com_same),
                                max_abs(k.sigma_diff - exact.sigma_diff));
    EXPECT_LE(err, prev + 1e-14) << n;
    prev = err;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Recursion, FactorizedPremodMatchesForConstantV) {
  const MatrixXd x = sample_inputs(3, 3, 9);
  const ArchSpec a =
      arch_with(Activation::relu, {8, 8}, ModulationSpec::deterministic(0.8), ModulationSpec::shifted(0.3));
  KernelOptions f;
  f.factorize_premod = true;
  const auto j = run_recursion(a, x).back();
  const auto k = run_recursion(a, x, f).back();
  EXPECT_LT(max_abs(j.theta_com_same - k.theta_com_same), 1e-12);
  EXPECT_LT(max_abs(j.theta_com_diff - k.theta_com_diff), 1e-12);
}

TEST(Recursion, RejectsUnsupportedArchitectures) {
  ArchSpec a = arch_with(Activation::relu, {8}, std::nullopt, std::nullopt);
  a.input_mod = ModulationSpec::gaussian(0, 1);
  EXPECT_THROW(run_recursion(a, sample_inputs(2, 3, 1)), ConfigError);
  a.input_mod.reset();
  a.parametrization = Parametrization::standard;
  EXPECT_THROW(run_recursion(a, sample_inputs(2, 3, 1)), ConfigError);
}

TEST(Assemble, BlockStructure) {
  const MatrixXd x = sample_inputs(3, 3, 10, true);
  const ArchSpec a = arch_with(Activation::relu, {8}, ModulationSpec::shifted(0.5),
                               ModulationSpec::shifted(0.5, true));
  const auto k = run_recursion(a, x).back();
  const MatrixXd one = assemble_ntk(k, 1, GammaMode::m);
  EXPECT_LT(max_abs(one - (k.theta_com_same + k.theta_ind_same)), 1e-15);
  EXPECT_LT(max_abs(assemble_ntk(k, 1, GammaMode::one) - one), 1e-15);
  const MatrixXd four = assemble_ntk(k, 4, GammaMode::one);
  EXPECT_LT(max_abs(four.block(0, 3, 3, 3) - k.theta_com_diff / 4), 1e-15);
  EXPECT_LT(max_abs(four.block(6, 6, 3, 3) - (k.theta_com_same / 4 + k.theta_ind_same)), 1e-15);
  EXPECT_TRUE(is_psd(four));
  EXPECT_TRUE(is_psd(gp_covariance_blocks(k, 4)));
}

TEST(Assemble, CenteredGammaMIsBlockDiagonalAndSizeFree) {
  const MatrixXd x = sample_inputs(3, 3, 11);
  const ArchSpec a = arch_with(Activation::relu, {8, 8}, std::nullopt, ModulationSpec::gaussian(0, 1));
  const auto k = run_recursion(a, x).back();
  const MatrixXd b1 = assemble_ntk(k, 1, GammaMode::m);
  for (int m : {4, 16}) {
    const MatrixXd bm = assemble_ntk(k, m, GammaMode::m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (i == j) {
          EXPECT_EQ(max_abs(bm.block(3 * i, 3 * j, 3, 3) - b1), 0.0);
        } else {
          EXPECT_LE(max_abs(bm.block(3 * i, 3 * j, 3, 3)), 1e-10);
        }
      }
    }
    const MatrixXd c = gp_covariance_blocks(k, m);
    EXPECT_LE(max_abs(c.block(0, 3, 3, 3)), 1e-10);
  }
}

TEST(Assemble, SingleInputShiftedCovarianceNonNegative) {
  MatrixXd x(1, 3);
  x << 0.5, -1.0, 2.0;
  const ArchSpec a = arch_with(Activation::relu, {8}, ModulationSpec::shifted(0.5), ModulationSpec::shifted(0.5));
  const auto k = run_recursion(a, x);
  const MatrixXd c = gp_covariance_blocks(k.back(), 2);
  const auto& hidden = k[0];
  const double expect = 0.25 * phi_expect(Activation::relu, {hidden.sigma_same(0, 0), hidden.sigma_diff(0, 0),
                                                             hidden.sigma_same(0, 0)},
                                          ModulationSpec::shifted(0.5), PairMode::diff_model);
  EXPECT_GT(c(0, 1), 0.0);
  EXPECT_NEAR(c(0, 1), expect, 1e-14);
}

TEST(Assemble, RejectsNonPsd) {
  LayerKernels k;
  k.sigma_same = MatrixXd::Identity(2, 2);
  k.sigma_diff = 2 * MatrixXd::Identity(2, 2);
  k.theta_com_same = MatrixXd::Identity(2, 2);
  k.theta_com_diff = 3 * MatrixXd::Identity(2, 2);
  k.theta_ind_same = MatrixXd::Zero(2, 2);
  EXPECT_THROW(assemble_ntk(k, 2, GammaMode::one), NumericalError);
  EXPECT_THROW(gp_covariance_blocks(k, 2), NumericalError);
}
