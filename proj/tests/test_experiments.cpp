#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "embens/dataset.hpp"
#include "embens/experiments.hpp"
#include "embens/kernel_theory.hpp"
#include "embens/report.hpp"

using namespace embens;
using Eigen::MatrixXd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

DatasetSpec blobs_spec(int classes, double sep, std::uint64_t seed = 0) {
  DatasetSpec s;
  s.kind = DatasetSpec::Kind::blobs;
  s.n_classes = classes;
  s.dim = 2;
  s.separation = sep;
  s.noise = 1.0;
  s.n_train = 64;
  s.n_test = 64;
  s.seed = seed;
  return s;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.arch = make_mlp(2, {16}, 2, Activation::relu, 2, ModulationSpec::gaussian(0, 1, true),
                    ModulationSpec::gaussian(0, 1, true));
  c.train.eta_w = 0.1;
  c.train.epochs = 3;
  c.train.batch_size = 16;
  c.dataset = blobs_spec(2, 2.0);
  c.n_seeds = 3;
  c.seed = 11;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("embens_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json strip_wall_time(json runs) {
  for (auto& r : runs) r.erase("wall_time");
  return runs;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

// --- datasets -----------------------------------------------------------------

TEST(Dataset, SameSeedSameArrays) {
  for (auto kind : {DatasetSpec::Kind::blobs, DatasetSpec::Kind::spirals, DatasetSpec::Kind::teacher}) {
    DatasetSpec s = blobs_spec(3, 2.0, 5);
    s.kind = kind;
    const Dataset a = gen_dataset(s), b = gen_dataset(s);
    EXPECT_EQ(a.train.inputs, b.train.inputs);
    EXPECT_EQ(a.test.inputs, b.test.inputs);
    EXPECT_EQ(a.train.labels, b.train.labels);
    EXPECT_EQ(a.train.targets, b.train.targets);
    s.seed = 6;
    EXPECT_NE(gen_dataset(s).train.inputs, a.train.inputs) << to_string(kind);
  }
}

TEST(Dataset, ShapesAndLabels) {
  DatasetSpec s = blobs_spec(4, 3.0);
  s.dim = 5;
  s.n_train = 40;
  s.n_test = 7;
  const Dataset d = gen_dataset(s);
  EXPECT_EQ(d.n_classes, 4);
  EXPECT_EQ(d.train.inputs.rows(), 40);
  EXPECT_EQ(d.train.inputs.cols(), 5);
  EXPECT_EQ(d.test.size(), 7);
  std::set<int> seen(d.train.labels.begin(), d.train.labels.end());
  for (int y : seen) EXPECT_TRUE(y >= 0 && y < 4);
  EXPECT_EQ(seen.size(), 4u);

  s.kind = DatasetSpec::Kind::teacher;
  const Dataset t = gen_dataset(s);
  EXPECT_FALSE(t.is_classification());
  EXPECT_EQ(t.train.targets.rows(), 40);
  EXPECT_EQ(t.train.targets.cols(), 1);
}

TEST(Dataset, WellSeparatedBlobsAreLinearlySeparable) {
  DatasetSpec s = blobs_spec(2, 10.0, 3);
  s.n_train = 500;
  const Dataset d = gen_dataset(s);
  // Least-squares linear probe with bias on +-1 targets.
  MatrixXd a(d.train.size(), 3);
  Eigen::VectorXd y(d.train.size());
  for (int i = 0; i < d.train.size(); ++i) {
    a.row(i) << d.train.inputs(i, 0), d.train.inputs(i, 1), 1.0;
    y(i) = d.train.labels[i] == 1 ? 1.0 : -1.0;
  }
  const Eigen::VectorXd w = a.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd score = a * w;
  for (int i = 0; i < d.train.size(); ++i) EXPECT_GT(score(i) * y(i), 0.0) << "row " << i;
}

TEST(Dataset, TeacherVarianceMatchesGpPrior) {
  // y(x)^2 / Sigma(x, x) has mean 1 over fresh teachers when outputs are
  // Gaussian with the prior variance.
  DatasetSpec s;
  s.kind = DatasetSpec::Kind::teacher;
  s.dim = 3;
  s.n_train = 1;
  s.n_test = 1;
  const ArchSpec arch = make_mlp(3, {256}, 1, Activation::relu, 1, std::nullopt, std::nullopt);
  const int n = 1000;
  double sum = 0.0, sum2 = 0.0;
  for (int seed = 0; seed < n; ++seed) {
    s.seed = static_cast<std::uint64_t>(seed);
    const Dataset d = gen_dataset(s);
    const double prior = run_recursion(arch, d.train.inputs).back().sigma_same(0, 0);
    const double r = d.train.targets(0, 0) * d.train.targets(0, 0) / prior;
    sum += r;
    sum2 += r * r;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / (n - 1));
  EXPECT_LT(std::abs(mean - 1.0), 3.0 * se) << "mean " << mean << " se " << se;
}

TEST(Dataset, Validation) {
  DatasetSpec s = blobs_spec(2, 1.0);
  s.n_train = 0;
  EXPECT_THROW(gen_dataset(s), ConfigError);
  s = blobs_spec(2, 1.0);
  s.n_test = 0;
  EXPECT_THROW(gen_dataset(s), ConfigError);
  s = blobs_spec(2, 1.0);
  s.kind = DatasetSpec::Kind::csv;
  s.path = "/nonexistent/file.csv";
  EXPECT_THROW(gen_dataset(s), ConfigError);
  EXPECT_THROW(parse_dataset_kind("mnist"), ConfigError);
}

TEST(Dataset, JsonRoundTrip) {
  DatasetSpec s = blobs_spec(3, 4.5, 9);
  s.kind = DatasetSpec::Kind::spirals;
  s.noise = 0.25;
  const DatasetSpec r = dataset_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(r), to_json(s));
}

// --- csv ingestion ----------------------------------------------------------------

TEST(Csv, ClassificationRoundTrip) {
  const Dataset d = gen_dataset(blobs_spec(3, 2.0));
  std::stringstream ss;
  write_csv_split(ss, d.train, true);
  EXPECT_EQ(first_line(ss.str()), "x0,x1,label");
  const Dataset r = read_csv_dataset(ss, 50, 14);
  EXPECT_EQ(r.n_classes, 3);
  EXPECT_EQ(r.train.inputs, d.train.inputs.topRows(50));
  EXPECT_EQ(r.test.inputs, d.train.inputs.bottomRows(14));
  EXPECT_EQ(std::vector<int>(d.train.labels.begin(), d.train.labels.begin() + 50), r.train.labels);
}

TEST(Csv, RegressionTargets) {
  std::stringstream ss("a,b,y\n1,2,0.5\r\n3,4,-1.25\n\n5,6,2\n");
  const Dataset d = read_csv_dataset(ss, 2, 1);
  EXPECT_FALSE(d.is_classification());
  EXPECT_EQ(d.train.targets(1, 0), -1.25);
  EXPECT_EQ(d.test.inputs(0, 1), 6.0);
}

TEST(Csv, ErrorsNameTheLine) {
  auto message = [](const std::string& text, int n_train, int n_test) {
    std::stringstream ss(text);
    try {
      read_csv_dataset(ss, n_train, n_test);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("x,y\n1,0\n2,zz\n", 1, 1).find("line 3"), std::string::npos);
  EXPECT_NE(message("x,y\n1,0\n2,1,5\n", 1, 1).find("line 3"), std::string::npos);
  EXPECT_NE(message("x,y\n1,0\n7\n", 1, 1).find("line 3"), std::string::npos);
  EXPECT_NE(message("x,y\n1.5x,0\n", 1, 0).find("line 2"), std::string::npos);
  EXPECT_NE(message("x,y\n1,0\n", 1, 1).find("requested 2"), std::string::npos);
}

// --- configuration ----------------------------------------------------------------

TEST(Config, JsonRoundTripAndDefaults) {
  ExperimentConfig c = tiny_config();
  c.sweep.p = {0.0, 0.5};
  c.sweep.n_models = {1, 3};
  c.sweep.gamma_mode = {GammaMode::one, GammaMode::m};
  c.train.eta_u = 0.02;
  const ExperimentConfig r = experiment_from_json(to_json(c));
  EXPECT_EQ(to_json(r), to_json(c));

  const ExperimentConfig d = experiment_from_json(json{{"arch", to_json(c.arch)}});
  const ExperimentConfig def;
  EXPECT_EQ(d.n_seeds, def.n_seeds);
  EXPECT_EQ(d.train.eta_w, def.train.eta_w);
  EXPECT_EQ(d.kernel.quad.nodes_per_dim, def.kernel.quad.nodes_per_dim);
}

TEST(Config, RejectsBadValues) {
  json j = to_json(tiny_config());
  EXPECT_THROW(experiment_from_json(json::object()), ConfigError);
  json bad = j;
  bad["n_seeds"] = 0;
  EXPECT_THROW(experiment_from_json(bad), ConfigError);
  bad = j;
  bad["sweep"]["p"] = {1.5};
  EXPECT_THROW(experiment_from_json(bad), ConfigError);
  bad = j;
  bad["train"]["gamma_mode"] = "sqrt";
  EXPECT_THROW(experiment_from_json(bad), ConfigError);
  bad = j;
  bad["n_seeds"] = "three";
  EXPECT_THROW(experiment_from_json(bad), ConfigError);
  EXPECT_THROW(load_experiment("/nonexistent/config.json"), ConfigError);
}

TEST(Config, HashIsStableAndSensitive) {
  const ExperimentConfig c = tiny_config();
  const std::string h = config_hash(c);
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h, config_hash(experiment_from_json(json::parse(to_json(c).dump()))));
  ExperimentConfig other = c;
  other.out_dir = "elsewhere";
  other.threads = 8;
  EXPECT_EQ(config_hash(other), h);
  other = c;
  other.seed += 1;
  EXPECT_NE(config_hash(other), h);
  other = c;
  other.train.eta_w *= 2.0;
  EXPECT_NE(config_hash(other), h);
  // Pinned so that a change in serialization shows up as a failure.
  EXPECT_EQ(h, "a5b7e39000cf473d");
}

// --- helpers ------------------------------------------------------------------------

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (int threads : {1, 2, 7}) {
    std::vector<int> hits(100, 0);
    parallel_for(100, threads, [&](int i) { ++hits[i]; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  EXPECT_THROW(parallel_for(10, 3,
                            [](int i) {
                              if (i == 4) throw NumericalError("boom");
                            }),
               NumericalError);
}

TEST(ArchTransforms, ShiftedModsAndWidthScaling) {
  const ArchSpec base = make_mlp(2, {10, 7}, 1, Activation::erf, 3, std::nullopt, std::nullopt);
  const ArchSpec s = with_shifted_mods(base, 0.6, true, false, true);
  for (const auto& l : s.layers) {
    ASSERT_TRUE(l.post_mod.has_value());
    EXPECT_EQ(l.post_mod->mean, 0.6);
    EXPECT_NEAR(l.post_mod->variance, 1.0 - 0.36, 1e-15);
    EXPECT_TRUE(l.post_mod->trainable);
    EXPECT_FALSE(l.pre_mod.has_value());
  }
  const ArchSpec w = scale_width(base, 0.5);
  EXPECT_EQ(w.layers[0].width, 5);
  EXPECT_EQ(w.layers[1].width, 4);
  EXPECT_EQ(scale_width(base, 0.01).layers[0].width, 1);
}

// --- reports --------------------------------------------------------------------------

TEST(Report, EmptyRecordsGiveHeaderOnlyCsv) {
  std::stringstream runs, metrics;
  write_runs_csv(runs, {});
  write_metrics_csv(metrics, {});
  EXPECT_EQ(runs.str(), "config_hash,seed,diverged,wall_time\n");
  EXPECT_EQ(metrics.str(), "name,value,stderr,n\n");
}

TEST(Report, JsonRoundTripRestoresRecords) {
  RunRecord r;
  r.config_hash = "00ff00ff00ff00ff";
  r.seed = 4;
  r.keys = {{"p", 0.3}, {"M", 4}};
  r.epochs = {{{"epoch", 0}, {"loss", 0.7}}, {{"epoch", 1}, {"loss", 0.5}}};
  r.metrics = {{"acc", 0.91}};
  r.note = "ok";
  r.wall_time = 1.5;
  RunRecord bad = r;
  bad.diverged = true;
  bad.metrics.clear();
  const json j = runs_to_json({r, bad});
  const auto back = runs_from_json(json::parse(j.dump()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(runs_to_json(back), j);
  EXPECT_TRUE(back[1].diverged);
  EXPECT_EQ(back[0].epochs[1].at("loss"), 0.5);

  MetricReport m{"acc", {{"M", 2}}, 0.8, 0.01, 5};
  EXPECT_EQ(to_json(metric_from_json(to_json(m))), to_json(m));
}

TEST(Report, ColumnOrderIsSortedAndStable) {
  RunRecord a, b;
  a.keys = {{"p", 0.0}, {"M", 1}};
  a.metrics = {{"zeta", 1.0}, {"alpha", 2.0}};
  b.keys = {{"width_factor", 2.0}};
  b.metrics = {{"beta", 3.0}};
  std::stringstream s1, s2;
  write_runs_csv(s1, {a, b});
  write_runs_csv(s2, {b, a});
  EXPECT_EQ(first_line(s1.str()), "config_hash,seed,diverged,M,p,width_factor,alpha,beta,zeta,wall_time");
  EXPECT_EQ(first_line(s1.str()), first_line(s2.str()));
}

TEST(Report, AggregateExcludesDivergedRuns) {
  std::vector<RunRecord> runs(4);
  for (int i = 0; i < 4; ++i) {
    runs[i].keys = {{"M", 2}};
    runs[i].metrics = {{"acc", static_cast<double>(i)}};
  }
  runs[3].diverged = true;
  runs[3].metrics = {{"acc", 1e9}};
  const auto reps = aggregate(runs);
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_EQ(reps[0].name, "acc");
  EXPECT_EQ(reps[0].n, 3);
  EXPECT_DOUBLE_EQ(reps[0].value, 1.0);
  EXPECT_NEAR(reps[0].stderr_, std::sqrt(1.0 / 3.0), 1e-15);
  EXPECT_EQ(reps[1].name, "diverged");
  EXPECT_EQ(reps[1].value, 1.0);
}

TEST(Report, KernelBlobRoundTrip) {
  const ArchSpec a = make_mlp(3, {8, 8}, 1, Activation::erf, 2, ModulationSpec::gaussian(0.2, 0.5),
                              ModulationSpec::gaussian(0, 1));
  MatrixXd x(3, 3);
  x << 1, 0, 0.5, -1, 2, 0, 0.3, 0.3, 0.3;
  const auto layers = run_recursion(a, x);
  const fs::path dir = scratch("blob");
  write_kernels_blob((dir / "k.bin").string(), layers, {{"tag", "t"}});
  json meta;
  const auto back = read_kernels_blob((dir / "k.bin").string(), &meta);
  EXPECT_EQ(meta.at("tag"), "t");
  ASSERT_EQ(back.size(), layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    EXPECT_EQ(back[l].sigma_same, layers[l].sigma_same);
    EXPECT_EQ(back[l].sigma_diff, layers[l].sigma_diff);
    EXPECT_EQ(back[l].theta_com_same, layers[l].theta_com_same);
    EXPECT_EQ(back[l].theta_com_diff, layers[l].theta_com_diff);
    EXPECT_EQ(back[l].theta_ind_same, layers[l].theta_ind_same);
  }
  std::ofstream(dir / "junk.bin") << "NOTAKERNEL";
  EXPECT_ANY_THROW(read_kernels_blob((dir / "junk.bin").string()));

  std::stringstream csv;
  write_kernels_csv(csv, layers);
  EXPECT_EQ(first_line(csv.str()), "layer,row,col,channel,value");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 1 + static_cast<int>(layers.size()) * 5 * 9);
}

// --- drivers ---------------------------------------------------------------------------

TEST(RegimeSweep, DeterministicAcrossThreadCounts) {
  ExperimentConfig c = tiny_config();
  c.sweep.p = {0.0, 0.9};
  c.sweep.n_models = {1, 2};
  const auto a = run_regime_sweep(c);
  c.threads = 3;
  const auto b = run_regime_sweep(c);
  ASSERT_EQ(a.size(), 2u * 2u * 3u);
  EXPECT_EQ(strip_wall_time(runs_to_json(a)).dump(), strip_wall_time(runs_to_json(b)).dump());
  for (const auto& r : a) {
    EXPECT_EQ(r.config_hash, config_hash(c));
    EXPECT_TRUE(r.keys.count("p") && r.keys.count("M"));
    EXPECT_EQ(r.epochs.size(), 4u);  // epoch 0 plus three
  }
  // Every cell gets a standard error over its seeds.
  for (const auto& m : aggregate(a)) {
    if (m.name == "diverged") continue;
    // Correlation skips pairs whose indicators have no variance.
    if (m.name == "correlation") {
      EXPECT_GE(m.n, 1);
      if (m.n < 2) continue;
    } else {
      EXPECT_EQ(m.n, 3) << m.name;
    }
    EXPECT_TRUE(std::isfinite(m.stderr_)) << m.name;
  }
}

TEST(RegimeSweep, IdenticalModelsAtFullShift) {
  ExperimentConfig c = tiny_config();
  c.dataset = blobs_spec(2, 0.8);
  c.arch.n_models = 3;
  c.sweep.p = {1.0};
  for (const auto& r : run_regime_sweep(c)) {
    ASSERT_FALSE(r.diverged);
    EXPECT_EQ(r.metrics.at("ensemble_test_acc"), r.metrics.at("mean_test_acc"));
    EXPECT_EQ(r.metrics.at("ensemble_train_acc"), r.metrics.at("mean_train_acc"));
    ASSERT_GT(r.metrics.at("correlation_pairs"), 0.0);
    EXPECT_NEAR(r.metrics.at("correlation"), 1.0, 1e-12);
  }
}

TEST(RegimeSweep, DivergentRunsAreFlaggedNotFatal) {
  ExperimentConfig c = tiny_config();
  c.train.eta_w = 1e8;
  c.sweep.p = {0.0};
  c.n_seeds = 2;
  const auto runs = run_regime_sweep(c);
  for (const auto& r : runs) {
    EXPECT_TRUE(r.diverged);
    EXPECT_TRUE(r.metrics.empty());
    EXPECT_FALSE(r.note.empty());
  }
  const auto reps = aggregate(runs);
  ASSERT_EQ(reps.size(), 1u);
  EXPECT_EQ(reps[0].value, 2.0);
}

TEST(WidthSweep, SingleModelColumnMatchesPlainTraining) {
  ExperimentConfig c = tiny_config();
  c.sweep.width_factor = {0.5, 2.0};
  c.sweep.n_models = {1, 2};
  c.n_seeds = 2;
  const auto runs = run_width_sweep(c);
  ASSERT_EQ(runs.size(), 8u);
  const Dataset data = gen_dataset(c.dataset);
  for (const auto& r : runs) {
    if (r.keys.at("M") != 1) {
      EXPECT_TRUE(r.metrics.count("interaction_offdiag"));
      continue;
    }
    ArchSpec a = scale_width(c.arch, r.keys.at("width_factor"));
    a.n_models = 1;
    const RunRecord plain =
        train_run(a, data, c.train, split_rng(Seed{c.seed, 0}, r.seed), r.config_hash, r.seed);
    EXPECT_EQ(plain.metrics, r.metrics);
  }
}

TEST(Verify, WideReluMatchesTheory) {
  ExperimentConfig c = tiny_config();
  c.arch = make_mlp(2, {512}, 1, Activation::relu, 2, ModulationSpec::gaussian(0, 1),
                    ModulationSpec::gaussian(0, 1, true));
  c.n_points = 3;
  c.n_seeds = 40;
  c.rel_tol = 0.1;
  const VerifyReport r = run_verify(c);
  EXPECT_TRUE(r.channel_pass.at("sigma_same"));
  EXPECT_TRUE(r.channel_pass.at("theta_same"));
  // Relative to the diagonal scale, so near-zero off-diagonal entries are not
  // judged by their own size.
  std::map<std::pair<int, int>, double> diag;
  for (const auto& e : r.entries) {
    if (e.channel == "theta_same" && e.i == e.j) diag[{e.i, e.i}] = e.theory;
  }
  for (const auto& e : r.entries) {
    if (e.channel != "theta_same") continue;
    const double scale = std::sqrt(diag.at({e.i, e.i}) * diag.at({e.j, e.j}));
    EXPECT_LE(std::abs(e.empirical - e.theory), 0.1 * scale) << e.i << "," << e.j;
  }
  // Centered modulations: theory is zero across models, so only the 3 sigma
  // rule applies.
  EXPECT_TRUE(r.channel_pass.at("sigma_diff"));
  EXPECT_TRUE(r.channel_pass.at("theta_diff"));
  for (const auto& e : r.entries) {
    if (e.channel == "sigma_diff" || e.channel == "theta_diff") EXPECT_EQ(e.theory, 0.0);
  }
  EXPECT_EQ(to_json(r).at("entries").size(), r.entries.size());
  c.n_seeds = 1;
  EXPECT_THROW(run_verify(c), ConfigError);
}

TEST(Dynamics, DeviationShrinksWithRate) {
  ExperimentConfig c = tiny_config();
  // A linear model has a constant NTK equal to the theory kernel, so the only
  // gap left is the Euler discretization.
  c.arch = make_mlp(2, {}, 1, Activation::identity, 1, std::nullopt, std::nullopt);
  c.dataset.kind = DatasetSpec::Kind::teacher;
  c.n_points = 6;
  // Same horizon t = 0.5 at two step sizes.
  std::vector<double> dev;
  for (double lr : {0.05, 0.005}) {
    c.train.eta_w = lr;
    c.steps = static_cast<int>(std::lround(0.5 / lr));
    c.record_every = c.steps;
    const DynamicsReport r = run_dynamics_compare(c);
    ASSERT_EQ(r.times.size(), 2u);
    EXPECT_NEAR(r.times.back(), 0.5, 1e-12);
    EXPECT_EQ(r.deviation.front(), 0.0);
    dev.push_back(r.deviation.back());
  }
  EXPECT_GT(dev[1], 0.0);
  EXPECT_NEAR(dev[0] / dev[1], 10.0, 2.0);
}

TEST(Dynamics, KernelTrajectoriesIndependentOfEnsembleSizeAtGammaM) {
  ExperimentConfig c = tiny_config();
  c.arch = make_mlp(2, {64}, 1, Activation::relu, 4, ModulationSpec::gaussian(0, 1),
                    ModulationSpec::gaussian(0, 1, true));
  c.dataset.kind = DatasetSpec::Kind::teacher;
  c.train.gamma_mode = GammaMode::m;
  c.train.eta_w = 0.05;
  c.n_points = 5;
  c.steps = 40;
  c.sweep.n_models = {1, 4, 16};
  const DynamicsReport r = run_dynamics_compare(c);
  ASSERT_EQ(r.m_invariance.size(), 3u);
  for (const auto& [m, gap] : r.m_invariance) EXPECT_LE(gap, 1e-10) << "M=" << m;
}

TEST(MatchGamma, ReferenceSizeHasUnitGamma) {
  ExperimentConfig c = tiny_config();
  c.sweep.n_models = {1, 2};
  c.sweep.lr = {0.05, 0.2};
  c.n_seeds = 1;
  const GammaMatch g = match_gamma(c);
  EXPECT_EQ(g.runs.size(), 4u);
  EXPECT_EQ(g.gamma.at(1), 1.0);
  EXPECT_EQ(g.gamma.at(2), 2.0 * g.best_lr.at(2) / g.best_lr.at(1));
  c.sweep.n_models = {2};
  EXPECT_THROW(match_gamma(c), ConfigError);
}

// --- command line ----------------------------------------------------------------------

namespace {

int run_cli(const std::string& args) {
  const char* exe = std::getenv("EMBENS_CLI");
  if (!exe) return -1;
  const int rc = std::system((std::string(exe) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Cli, SubcommandsAndExitCodes) {
  if (!std::getenv("EMBENS_CLI")) GTEST_SKIP() << "EMBENS_CLI not set";
  const fs::path dir = scratch("cli");
  ExperimentConfig c = tiny_config();
  c.n_points = 4;
  {
    std::ofstream f(dir / "cfg.json");
    f << to_json(c).dump(2);
  }
  const std::string cfg = "--config " + (dir / "cfg.json").string();
  const std::string out = " --out " + (dir / "out").string();
  EXPECT_EQ(run_cli(cfg + out + " dataset"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "train.csv"));
  EXPECT_EQ(run_cli(cfg + out + " kernel"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "kernels.csv"));
  EXPECT_EQ(read_kernels_blob((dir / "out" / "kernels.bin").string()).size(), 2u);
  EXPECT_EQ(run_cli(cfg + out + " --seed 3 train"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "params.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "out" / "metrics.csv"));

  // Identical (config, seed) gives identical reports apart from wall time.
  const json first = strip_wall_time(json::parse(slurp(dir / "out" / "runs.json")));
  EXPECT_EQ(run_cli(cfg + out + " --seed 3 train"), 0);
  EXPECT_EQ(strip_wall_time(json::parse(slurp(dir / "out" / "runs.json"))).dump(), first.dump());

  EXPECT_EQ(run_cli(cfg + out), 1);                      // no subcommand
  EXPECT_EQ(run_cli(cfg + out + " frobnicate"), 1);      // unknown subcommand
  EXPECT_EQ(run_cli("--config /nonexistent.json kernel"), 1);
  EXPECT_EQ(run_cli(cfg + out + " --threads 0 train"), 1);
  {
    std::ofstream f(dir / "broken.json");
    f << "{\"arch\": ";
  }
  EXPECT_EQ(run_cli("--config " + (dir / "broken.json").string() + out + " kernel"), 1);

  c.train.eta_w = 1e8;
  {
    std::ofstream f(dir / "hot.json");
    f << to_json(c).dump(2);
  }
  EXPECT_EQ(run_cli("--config " + (dir / "hot.json").string() + out + " train"), 2);
  EXPECT_EQ(run_cli("--help"), 0);
}
