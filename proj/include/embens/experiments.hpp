#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "embens/arch.hpp"
#include "embens/dataset.hpp"
#include "embens/ensemble_net.hpp"
#include "embens/kernel_theory.hpp"
#include "embens/report.hpp"

namespace embens {

struct SweepAxes {
  std::vector<double> p;
  std::vector<double> width_factor;
  std::vector<int> n_models;
  std::vector<GammaMode> gamma_mode;
  std::vector<double> lr;
};

/// Everything a driver needs; every run is a function of (config, seed).
struct ExperimentConfig {
  ArchSpec arch;
  TrainConfig train;
  DatasetSpec dataset;
  SweepAxes sweep;
  int n_seeds = 3;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 1;
  KernelOptions kernel;

  // Sweeps replace hidden-layer modulations by shifted(p) in these slots.
  bool sweep_post = true;
  bool sweep_pre = true;
  bool sweep_trainable = true;

  // verify / dynamics
  int n_points = 8;        // inputs taken from the head of the train split
  double rel_tol = 0.1;    // same-channel relative tolerance for verify
  int steps = 2000;        // full-batch steps for dynamics
  int record_every = 10;
  std::string gamma_criterion = "test_acc";  // test_acc | train_acc | train_loss

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing fields keep their defaults.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

/// Runs fn(0..n-1) on `threads` workers pulling indices from a shared counter.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Copy of `arch` whose hidden layers carry shifted(p) modulations in the
/// configured slots.
ArchSpec with_shifted_mods(const ArchSpec& arch, double p, bool post, bool pre, bool trainable);
/// Copy with hidden widths scaled by `factor` (rounded, at least 1).
ArchSpec scale_width(const ArchSpec& arch, double factor);

/// Trains one ensemble and fills the standard classification metrics.
RunRecord train_run(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg, Seed seed,
                    const std::string& hash, std::uint64_t seed_index, EnsembleParams* final_params = nullptr);

std::vector<RunRecord> run_regime_sweep(const ExperimentConfig& cfg);
std::vector<RunRecord> run_width_sweep(const ExperimentConfig& cfg);

struct VerifyEntry {
  std::string channel;  // sigma_same | sigma_diff | theta_same | theta_diff
  int i = 0;
  int j = 0;
  double theory = 0.0;
  double empirical = 0.0;
  double stderr_ = 0.0;
  double rel_err = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyEntry> entries;
  std::map<std::string, bool> channel_pass;
  std::map<std::string, double> channel_max_rel_err;
  bool all_pass = true;
};

/// Compares run_recursion with seed-averaged finite-width covariance and NTK.
/// An entry passes when |emp - theory| <= 3 stderr, or, for nonzero theory,
/// when the relative error is within rel_tol.
VerifyReport run_verify(const ExperimentConfig& cfg);
nlohmann::json to_json(const VerifyReport& r);

struct DynamicsReport {
  std::vector<double> times;
  std::vector<double> net_mse;     // finite net, mean over models
  std::vector<double> kernel_mse;  // kernel prediction
  std::vector<double> deviation;   // ||f_net - f_kernel|| / ||f_kernel - y||
  int halving_index = -1;          // first record where net MSE <= half the initial
  double max_deviation_before_halving = 0.0;
  std::map<int, double> m_invariance;  // M -> max |f_alpha^(M)(t) - f_alpha^(M_0)(t)| over shared models
};

/// Full-batch MSE training of cfg.arch from its initialization against the
/// theory-kernel prediction from the same initial outputs. Time is
/// steps * eta_w.
DynamicsReport run_dynamics_compare(const ExperimentConfig& cfg);
nlohmann::json to_json(const DynamicsReport& r);

struct GammaMatch {
  std::vector<RunRecord> runs;
  std::map<int, double> best_lr;
  std::map<int, double> gamma;  // M * best_lr(M) / best_lr(1)
};

/// Grid search over sweep.lr for every M in sweep.n_models (must include 1),
/// training with gamma_mode = m and picking the lr that is best under
/// cfg.gamma_criterion.
GammaMatch match_gamma(const ExperimentConfig& cfg);

}  // namespace embens
