#include "embens/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "embens/diagnostics.hpp"
#include "embens/dynamics.hpp"

namespace embens {

using Eigen::MatrixXd;
using nlohmann::json;

namespace {

json train_to_json(const TrainConfig& t) {
  json j = {{"eta_w", t.eta_w}, {"gamma_mode", to_string(t.gamma_mode)}, {"gamma_value", t.gamma_value},
            {"batch_size", t.batch_size}, {"epochs", t.epochs}, {"loss", to_string(t.loss_kind)},
            {"dropout_resample", t.dropout_resample}};
  if (t.eta_u) j["eta_u"] = *t.eta_u;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.eta_w = j.value("eta_w", t.eta_w);
  if (j.contains("eta_u") && !j.at("eta_u").is_null()) t.eta_u = j.at("eta_u").get<double>();
  t.gamma_mode = parse_gamma_mode(j.value("gamma_mode", std::string("m")));
  t.gamma_value = j.value("gamma_value", t.gamma_value);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  t.loss_kind = parse_loss_kind(j.value("loss", std::string("cross_entropy")));
  t.dropout_resample = j.value("dropout_resample", false);
  t.validate();
  return t;
}

double gamma_code(GammaMode g) {
  switch (g) {
    case GammaMode::one: return 0.0;
    case GammaMode::m: return 1.0;
    case GammaMode::custom: return 2.0;
  }
  return -1.0;
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

Seed run_seed(const ExperimentConfig& cfg, std::uint64_t s) { return split_rng(Seed{cfg.seed, 0}, s); }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

void ExperimentConfig::validate() const {
  arch.validate();
  train.validate();
  dataset.validate();
  if (n_seeds < 1) throw ConfigError("experiment: n_seeds must be >= 1");
  if (threads < 1) throw ConfigError("experiment: threads must be >= 1");
  if (kernel.quad.nodes_per_dim < 1) throw ConfigError("experiment: quad nodes must be >= 1");
  if (n_points < 1) throw ConfigError("experiment: n_points must be >= 1");
  if (steps < 0 || record_every < 1) throw ConfigError("experiment: steps >= 0 and record_every >= 1 required");
  for (double p : sweep.p) {
    if (p < -1.0 || p > 1.0) throw ConfigError("experiment: sweep p must lie in [-1, 1]");
  }
  for (double w : sweep.width_factor) {
    if (!(w > 0.0)) throw ConfigError("experiment: width factors must be > 0");
  }
  for (int m : sweep.n_models) {
    if (m < 1) throw ConfigError("experiment: sweep M must be >= 1");
  }
  for (double lr : sweep.lr) {
    if (!(lr > 0.0)) throw ConfigError("experiment: sweep lr must be > 0");
  }
}

json to_json(const ExperimentConfig& c) {
  json sweep = {{"p", c.sweep.p}, {"width_factor", c.sweep.width_factor}, {"M", c.sweep.n_models},
                {"lr", c.sweep.lr}};
  json gm = json::array();
  for (auto g : c.sweep.gamma_mode) gm.push_back(to_string(g));
  sweep["gamma_mode"] = gm;
  return {{"arch", to_json(c.arch)},
          {"train", train_to_json(c.train)},
          {"dataset", to_json(c.dataset)},
          {"sweep", sweep},
          {"n_seeds", c.n_seeds},
          {"seed", c.seed},
          {"out", c.out_dir},
          {"threads", c.threads},
          {"quad_nodes", c.kernel.quad.nodes_per_dim},
          {"relu_closed_form", c.kernel.relu_closed_form},
          {"factorize_premod", c.kernel.factorize_premod},
          {"sweep_mods", {{"post", c.sweep_post}, {"pre", c.sweep_pre}, {"trainable", c.sweep_trainable}}},
          {"n_points", c.n_points},
          {"rel_tol", c.rel_tol},
          {"steps", c.steps},
          {"record_every", c.record_every},
          {"gamma_criterion", c.gamma_criterion}};
}

ExperimentConfig experiment_from_json(const json& j) {
  try {
    ExperimentConfig c;
    c.arch = arch_from_json(j.at("arch"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("dataset")) c.dataset = dataset_spec_from_json(j.at("dataset"));
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      c.sweep.p = s.value("p", std::vector<double>{});
      c.sweep.width_factor = s.value("width_factor", std::vector<double>{});
      c.sweep.n_models = s.value("M", std::vector<int>{});
      c.sweep.lr = s.value("lr", std::vector<double>{});
      for (const auto& g : s.value("gamma_mode", std::vector<std::string>{})) {
        c.sweep.gamma_mode.push_back(parse_gamma_mode(g));
      }
    }
    c.n_seeds = j.value("n_seeds", c.n_seeds);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out", c.out_dir);
    c.threads = j.value("threads", c.threads);
    c.kernel.quad.nodes_per_dim = j.value("quad_nodes", c.kernel.quad.nodes_per_dim);
    c.kernel.relu_closed_form = j.value("relu_closed_form", false);
    c.kernel.factorize_premod = j.value("factorize_premod", false);
    if (j.contains("sweep_mods")) {
      const json& m = j.at("sweep_mods");
      c.sweep_post = m.value("post", true);
      c.sweep_pre = m.value("pre", true);
      c.sweep_trainable = m.value("trainable", true);
    }
    c.n_points = j.value("n_points", c.n_points);
    c.rel_tol = j.value("rel_tol", c.rel_tol);
    c.steps = j.value("steps", c.steps);
    c.record_every = j.value("record_every", c.record_every);
    c.gamma_criterion = j.value("gamma_criterion", c.gamma_criterion);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("out");
  j.erase("threads");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

ArchSpec with_shifted_mods(const ArchSpec& arch, double p, bool post, bool pre, bool trainable) {
  ArchSpec a = arch;
  const ModulationSpec m = ModulationSpec::shifted(p, trainable);
  for (auto& l : a.layers) {
    if (post) l.post_mod = m;
    if (pre) l.pre_mod = m;
  }
  return a;
}

ArchSpec scale_width(const ArchSpec& arch, double factor) {
  ArchSpec a = arch;
  for (auto& l : a.layers) l.width = std::max(1, static_cast<int>(std::lround(l.width * factor)));
  return a;
}

RunRecord train_run(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg, Seed seed,
                    const std::string& hash, std::uint64_t seed_index, EnsembleParams* final_params) {
  RunRecord rec;
  rec.config_hash = hash;
  rec.seed = seed_index;
  const double t0 = now_seconds();
  const EnsembleParams p0 = init_params(arch, split_rng(seed, 0));
  const TrainResult res = train(p0, arch, data, cfg, split_rng(seed, 1));
  for (const auto& e : res.history) {
    std::map<std::string, double> row{{"epoch", e.epoch}, {"mean_train_loss", mean_of(e.train_loss)},
                                      {"mean_test_loss", mean_of(e.test_loss)}};
    if (data.is_classification()) {
      row["mean_train_acc"] = mean_of(e.train_acc);
      row["mean_test_acc"] = mean_of(e.test_acc);
      row["ensemble_test_acc"] = e.ensemble_test_acc;
    } else {
      row["ensemble_test_loss"] = e.ensemble_test_loss;
    }
    rec.epochs.push_back(std::move(row));
  }
  if (res.diverged) {
    rec.diverged = true;
    rec.note = res.divergence_message;
  } else {
    const EpochRecord& last = res.history.back();
    rec.metrics["mean_train_loss"] = mean_of(last.train_loss);
    rec.metrics["mean_test_loss"] = mean_of(last.test_loss);
    if (data.is_classification()) {
      rec.metrics["mean_train_acc"] = mean_of(last.train_acc);
      rec.metrics["mean_test_acc"] = mean_of(last.test_acc);
      rec.metrics["ensemble_train_acc"] = last.ensemble_train_acc;
      rec.metrics["ensemble_test_acc"] = last.ensemble_test_acc;
      if (arch.n_models >= 2) {
        const PairStats c = binarized_correlation(forward_batch(res.params, arch, data.test.inputs), data.test.labels);
        rec.metrics["correlation"] = c.mean;
        rec.metrics["correlation_pairs"] = c.n_pairs;
        rec.metrics["correlation_skipped"] = c.n_skipped;
      }
    } else {
      rec.metrics["ensemble_test_loss"] = last.ensemble_test_loss;
    }
  }
  rec.wall_time = now_seconds() - t0;
  if (final_params) *final_params = res.params;
  return rec;
}

namespace {

std::vector<GammaMode> gamma_axis(const ExperimentConfig& cfg) {
  return cfg.sweep.gamma_mode.empty() ? std::vector<GammaMode>{cfg.train.gamma_mode} : cfg.sweep.gamma_mode;
}

std::vector<int> models_axis(const ExperimentConfig& cfg) {
  return cfg.sweep.n_models.empty() ? std::vector<int>{cfg.arch.n_models} : cfg.sweep.n_models;
}

MatrixXd softmax_rows(const MatrixXd& f) {
  MatrixXd p(f.rows(), f.cols());
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    const Eigen::RowVectorXd e = (f.row(r).array() - f.row(r).maxCoeff()).exp().matrix();
    p.row(r) = e / e.sum();
  }
  return p;
}

}  // namespace

std::vector<RunRecord> run_regime_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep.p.empty()) throw ConfigError("sweep-regime: sweep.p is empty");
  const Dataset data = gen_dataset(cfg.dataset);
  if (!data.is_classification()) throw ConfigError("sweep-regime: needs a classification dataset");
  const std::string hash = config_hash(cfg);
  struct Cell {
    double p;
    int m;
    GammaMode g;
    int s;
  };
  std::vector<Cell> cells;
  for (double p : cfg.sweep.p) {
    for (int m : models_axis(cfg)) {
      for (GammaMode g : gamma_axis(cfg)) {
        for (int s = 0; s < cfg.n_seeds; ++s) cells.push_back({p, m, g, s});
      }
    }
  }
  std::vector<RunRecord> out(cells.size());
  parallel_for(static_cast<int>(cells.size()), cfg.threads, [&](int i) {
    const Cell& c = cells[i];
    ArchSpec arch = with_shifted_mods(cfg.arch, c.p, cfg.sweep_post, cfg.sweep_pre, cfg.sweep_trainable);
    arch.n_models = c.m;
    TrainConfig tc = cfg.train;
    tc.gamma_mode = c.g;
    out[i] = train_run(arch, data, tc, run_seed(cfg, c.s), hash, c.s);
    out[i].keys = {{"p", c.p}, {"M", c.m}, {"gamma_mode", gamma_code(c.g)}};
  });
  return out;
}

std::vector<RunRecord> run_width_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep.width_factor.empty()) throw ConfigError("sweep-width: sweep.width_factor is empty");
  const Dataset data = gen_dataset(cfg.dataset);
  const std::string hash = config_hash(cfg);
  const int n_probe = std::min(8, data.train.size());
  std::vector<int> idx(n_probe);
  for (int i = 0; i < n_probe; ++i) idx[i] = i;
  const Batch probe = data.train.rows(idx);
  struct Cell {
    double w;
    int m;
    GammaMode g;
    int s;
  };
  std::vector<Cell> cells;
  for (double w : cfg.sweep.width_factor) {
    for (int m : models_axis(cfg)) {
      for (GammaMode g : gamma_axis(cfg)) {
        for (int s = 0; s < cfg.n_seeds; ++s) cells.push_back({w, m, g, s});
      }
    }
  }
  std::vector<RunRecord> out(cells.size());
  parallel_for(static_cast<int>(cells.size()), cfg.threads, [&](int i) {
    const Cell& c = cells[i];
    ArchSpec arch = scale_width(cfg.arch, c.w);
    arch.n_models = c.m;
    TrainConfig tc = cfg.train;
    tc.gamma_mode = c.g;
    const Seed seed = run_seed(cfg, c.s);
    RunRecord rec = train_run(arch, data, tc, seed, hash, c.s);
    if (c.m >= 2) {
      const EnsembleParams p0 = init_params(arch, split_rng(seed, 0));
      MatrixXd reduced;
      if (data.is_classification()) {
        const ClassNtk k = class_ntk(p0, arch, probe.inputs, c.g, tc.gamma_value);
        std::vector<MatrixXd> probs;
        for (const auto& f : forward_batch(p0, arch, probe.inputs)) probs.push_back(softmax_rows(f));
        reduced = ntk_reduce_nll(k, probs, probe.labels);
      } else {
        reduced = empirical_ntk(p0, arch, probe.inputs, c.g, tc.gamma_value).values;
      }
      const InteractionMetrics im = interaction_metrics(reduced, c.m, 1, split_rng(seed, 2));
      rec.metrics["interaction_offdiag"] = im.offdiag_ratio;
      rec.metrics["interaction_coherent"] = im.coherent_ratio;
    }
    rec.keys = {{"width_factor", c.w}, {"M", c.m}, {"gamma_mode", gamma_code(c.g)}};
    out[i] = std::move(rec);
  });
  return out;
}

namespace {

MatrixXd head_inputs(const Dataset& d, int n) {
  if (d.train.size() < n) throw ConfigError("not enough train points for n_points");
  return d.train.inputs.topRows(n);
}

// Mean of same-model and cross-model blocks of an (M n)-square matrix.
void block_means(const MatrixXd& k, int m, MatrixXd& same, MatrixXd& diff) {
  const Eigen::Index n = k.rows() / m;
  same = MatrixXd::Zero(n, n);
  diff = MatrixXd::Zero(n, n);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) (a == b ? same : diff) += k.block(a * n, b * n, n, n);
  }
  same /= m;
  if (m > 1) diff /= static_cast<double>(m) * (m - 1);
}

}  // namespace

VerifyReport run_verify(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.n_seeds < 2) throw ConfigError("verify: n_seeds must be >= 2");
  const Dataset data = gen_dataset(cfg.dataset);
  const MatrixXd x = head_inputs(data, cfg.n_points);
  const ArchSpec& arch = cfg.arch;
  const int m = arch.n_models;
  const LayerKernels k = run_recursion(arch, x, cfg.kernel).back();
  const double g = gamma_factor(cfg.train, m) / m;

  const EmpiricalCovariance cov = empirical_covariance(arch, x, cfg.n_seeds, split_rng(Seed{cfg.seed, 0}, 7));
  const Eigen::Index n = x.rows();
  MatrixXd ts = MatrixXd::Zero(n, n), ts2 = ts, td = ts, td2 = ts;
  for (int s = 0; s < cfg.n_seeds; ++s) {
    const EnsembleParams p = init_params(arch, split_rng(split_rng(Seed{cfg.seed, 0}, 8), s));
    MatrixXd same, diff;
    block_means(empirical_ntk(p, arch, x, cfg.train.gamma_mode, cfg.train.gamma_value).values, m, same, diff);
    ts += same;
    ts2 += same.cwiseProduct(same);
    td += diff;
    td2 += diff.cwiseProduct(diff);
  }
  const double ns = cfg.n_seeds;
  auto se = [ns](const MatrixXd& sum, const MatrixXd& sq) {
    const MatrixXd mean = sum / ns;
    return MatrixXd((((sq / ns - mean.cwiseProduct(mean)) * (ns / (ns - 1.0))).cwiseMax(0.0) / ns).cwiseSqrt());
  };

  VerifyReport r;
  auto add = [&](const std::string& ch, const MatrixXd& th, const MatrixXd& em, const MatrixXd& err) {
    bool ok = true;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i; j < n; ++j) {
        VerifyEntry e;
        e.channel = ch;
        e.i = static_cast<int>(i);
        e.j = static_cast<int>(j);
        e.theory = th(i, j);
        e.empirical = em(i, j);
        e.stderr_ = err(i, j);
        const double gap = std::abs(e.empirical - e.theory);
        e.rel_err = e.theory != 0.0 ? gap / std::abs(e.theory) : (gap == 0.0 ? 0.0 : INFINITY);
        e.pass = gap <= 3.0 * e.stderr_ || (e.theory != 0.0 && e.rel_err <= cfg.rel_tol) || gap <= 1e-10;
        ok = ok && e.pass;
        if (std::isfinite(e.rel_err)) worst = std::max(worst, e.rel_err);
        r.entries.push_back(e);
      }
    }
    r.channel_pass[ch] = ok;
    r.channel_max_rel_err[ch] = worst;
    r.all_pass = r.all_pass && ok;
  };
  add("sigma_same", k.sigma_same, cov.same, cov.same_stderr);
  add("theta_same", g * k.theta_com_same + k.theta_ind_same, ts / ns, se(ts, ts2));
  if (m >= 2) {
    add("sigma_diff", k.sigma_diff, cov.diff, cov.diff_stderr);
    add("theta_diff", g * k.theta_com_diff, td / ns, se(td, td2));
  }
  return r;
}

json to_json(const VerifyReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"channel", e.channel}, {"i", e.i}, {"j", e.j}, {"theory", e.theory},
                       {"empirical", e.empirical}, {"stderr", e.stderr_},
                       {"rel_err", std::isfinite(e.rel_err) ? json(e.rel_err) : json(nullptr)}, {"pass", e.pass}});
  }
  return {{"entries", entries}, {"channel_pass", r.channel_pass}, {"channel_max_rel_err", r.channel_max_rel_err},
          {"all_pass", r.all_pass}};
}

namespace {

MatrixXd stacked_outputs(const EnsembleParams& p, const ArchSpec& arch, const MatrixXd& x) {
  const Eigen::Index n = x.rows();
  MatrixXd f(p.n_models() * n, arch.output_dim);
  for (int a = 0; a < p.n_models(); ++a) f.middleRows(a * n, n) = forward_model(p, arch, a, x).out;
  return f;
}

double stacked_mse(const MatrixXd& f, const MatrixXd& y, int m) {
  const Eigen::Index n = y.rows();
  double s = 0.0;
  for (int a = 0; a < m; ++a) s += 0.5 * (f.middleRows(a * n, n) - y).squaredNorm() / static_cast<double>(n);
  return s / m;
}

}  // namespace

DynamicsReport run_dynamics_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset data = gen_dataset(cfg.dataset);
  const int n = cfg.n_points;
  const ArchSpec& arch = cfg.arch;
  const int m = arch.n_models;
  Batch full;
  full.inputs = head_inputs(data, n);
  if (data.is_classification()) {
    full.targets = MatrixXd::Zero(n, arch.output_dim);
    for (int i = 0; i < n; ++i) full.targets(i, data.train.labels[i]) = 1.0;
  } else {
    full.targets = data.train.targets.topRows(n);
  }
  if (full.targets.cols() != arch.output_dim) throw ConfigError("dynamics: target width must equal output_dim");
  TrainConfig tc = cfg.train;
  tc.loss_kind = LossKind::mse;

  const LayerKernels k = run_recursion(arch, full.inputs, cfg.kernel).back();
  BlockKernel bk;
  bk.train_train = assemble_ntk(k, m, tc.gamma_mode, tc.gamma_value);
  bk.n_models = m;
  bk.n_train = n;
  bk.batch_size = n;

  const Seed seed = run_seed(cfg, 0);
  EnsembleParams p = init_params(arch, split_rng(seed, 0));
  const MatrixXd f0 = stacked_outputs(p, arch, full.inputs);
  DynamicsReport r;
  for (int step = 0; step <= cfg.steps; ++step) {
    if (step % cfg.record_every == 0 || step == cfg.steps) {
      const double t = step * tc.eta_w;
      const MatrixXd fk = mse_closed_form(bk, f0, full.targets, t);
      const MatrixXd fn = stacked_outputs(p, arch, full.inputs);
      MatrixXd yy(fk.rows(), fk.cols());
      for (int a = 0; a < m; ++a) yy.middleRows(a * n, n) = full.targets;
      r.times.push_back(t);
      r.net_mse.push_back(stacked_mse(fn, full.targets, m));
      r.kernel_mse.push_back(stacked_mse(fk, full.targets, m));
      const double resid = (fk - yy).norm();
      r.deviation.push_back(resid > 0.0 ? (fn - fk).norm() / resid : 0.0);
      if (r.halving_index < 0 && r.net_mse.back() <= 0.5 * r.net_mse.front()) {
        r.halving_index = static_cast<int>(r.times.size()) - 1;
      }
    }
    if (step == cfg.steps) break;
    p = sgd_step(p, arch, grads(p, arch, full, LossKind::mse), tc);
  }
  const std::size_t stop = r.halving_index >= 0 ? static_cast<std::size_t>(r.halving_index) + 1 : r.deviation.size();
  for (std::size_t i = 0; i < stop; ++i) r.max_deviation_before_halving = std::max(r.max_deviation_before_halving, r.deviation[i]);

  // Kernel-side per-model trajectories for every requested ensemble size.
  const std::vector<int> sizes = cfg.sweep.n_models;
  if (!sizes.empty()) {
    std::vector<std::vector<MatrixXd>> traj(sizes.size());
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      ArchSpec a = arch;
      a.n_models = sizes[s];
      const EnsembleParams ps = init_params(a, split_rng(seed, 0));
      BlockKernel b;
      b.train_train = assemble_ntk(k, sizes[s], tc.gamma_mode, tc.gamma_value);
      b.n_models = sizes[s];
      b.n_train = n;
      b.batch_size = n;
      const MatrixXd fs = stacked_outputs(ps, a, full.inputs);
      for (double t : r.times) traj[s].push_back(mse_closed_form(b, fs, full.targets, t));
    }
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      const int shared = std::min(sizes[0], sizes[s]);
      double worst = 0.0;
      for (std::size_t t = 0; t < r.times.size(); ++t) {
        const MatrixXd d = traj[s][t].topRows(shared * n) - traj[0][t].topRows(shared * n);
        worst = std::max(worst, d.cwiseAbs().maxCoeff());
      }
      r.m_invariance[sizes[s]] = worst;
    }
  }
  return r;
}

json to_json(const DynamicsReport& r) {
  json inv = json::object();
  for (const auto& [m, v] : r.m_invariance) inv[std::to_string(m)] = v;
  return {{"times", r.times}, {"net_mse", r.net_mse}, {"kernel_mse", r.kernel_mse}, {"deviation", r.deviation},
          {"halving_index", r.halving_index}, {"max_deviation_before_halving", r.max_deviation_before_halving},
          {"m_invariance", inv}};
}

GammaMatch match_gamma(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::vector<int> sizes = models_axis(cfg);
  if (std::find(sizes.begin(), sizes.end(), 1) == sizes.end()) throw ConfigError("gamma matching needs M = 1");
  if (cfg.sweep.lr.empty()) throw ConfigError("gamma matching needs sweep.lr");
  const Dataset data = gen_dataset(cfg.dataset);
  const std::string hash = config_hash(cfg);
  struct Cell {
    int m;
    double lr;
    int s;
  };
  std::vector<Cell> cells;
  for (int m : sizes) {
    for (double lr : cfg.sweep.lr) {
      for (int s = 0; s < cfg.n_seeds; ++s) cells.push_back({m, lr, s});
    }
  }
  GammaMatch gm;
  gm.runs.resize(cells.size());
  parallel_for(static_cast<int>(cells.size()), cfg.threads, [&](int i) {
    const Cell& c = cells[i];
    ArchSpec arch = cfg.arch;
    arch.n_models = c.m;
    TrainConfig tc = cfg.train;
    tc.gamma_mode = GammaMode::m;
    tc.eta_w = c.lr;
    if (!cfg.train.eta_u) tc.eta_u = c.lr;
    gm.runs[i] = train_run(arch, data, tc, run_seed(cfg, c.s), hash, c.s);
    gm.runs[i].keys = {{"M", c.m}, {"lr", c.lr}};
  });
  const bool minimize = cfg.gamma_criterion == "train_loss";
  const std::string metric = cfg.gamma_criterion == "train_loss"  ? "mean_train_loss"
                             : cfg.gamma_criterion == "train_acc" ? "ensemble_train_acc"
                                                                  : "ensemble_test_acc";
  for (int m : sizes) {
    double best = minimize ? INFINITY : -INFINITY;
    for (double lr : cfg.sweep.lr) {
      std::vector<double> vals;
      for (const auto& r : gm.runs) {
        if (r.keys.at("M") == m && r.keys.at("lr") == lr && !r.diverged && r.metrics.count(metric)) {
          vals.push_back(r.metrics.at(metric));
        }
      }
      if (vals.empty()) continue;
      const double v = mean_of(vals);
      if (minimize ? v < best : v > best) {
        best = v;
        gm.best_lr[m] = lr;
      }
    }
  }
  if (!gm.best_lr.count(1)) throw NumericalError("gamma matching: every M = 1 run diverged");
  for (const auto& [m, lr] : gm.best_lr) gm.gamma[m] = m * lr / gm.best_lr.at(1);
  return gm;
}

}  // namespace embens
