// Command-line driver for kernels, training, verification, sweeps and
// dynamics comparisons. Exit codes: 0 success, 1 configuration error,
// 2 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "embens/checkpoint.hpp"
#include "embens/dataset.hpp"
#include "embens/dynamics.hpp"
#include "embens/experiments.hpp"
#include "embens/kernel_theory.hpp"
#include "embens/report.hpp"

using namespace embens;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kDefaultConfig = R"({
  "arch": {"input_dim": 2, "output_dim": 2, "activation": "relu", "n_models": 4,
           "layers": [{"width": 128, "post_mod": {"kind": "gaussian", "mean": 0, "variance": 1, "trainable": true},
                                      "pre_mod": {"kind": "gaussian", "mean": 0, "variance": 1, "trainable": true}},
                      {"width": 128, "post_mod": {"kind": "gaussian", "mean": 0, "variance": 1, "trainable": true},
                                      "pre_mod": {"kind": "gaussian", "mean": 0, "variance": 1, "trainable": true}}]},
  "train": {"eta_w": 0.05, "gamma_mode": "m", "batch_size": 32, "epochs": 20, "loss": "cross_entropy"},
  "dataset": {"kind": "blobs", "n_classes": 2, "dim": 2, "separation": 2.0, "noise": 1.0,
              "n_train": 256, "n_test": 256, "seed": 0},
  "sweep": {"p": [0.0, 0.3, 0.6, 0.9], "M": [1, 2, 4], "width_factor": [0.5, 1, 2]},
  "n_seeds": 3
})";

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::optional<int> quad_nodes;
};

ExperimentConfig resolve(const Globals& g) {
  json j = g.config.empty() ? json::parse(kDefaultConfig) : json();
  if (!g.config.empty()) {
    std::ifstream in(g.config);
    if (!in) throw ConfigError("cannot open config: " + g.config);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config " + g.config + ": " + e.what());
    }
  }
  if (g.seed) j["seed"] = *g.seed;
  if (!g.out.empty()) j["out"] = g.out;
  if (g.threads) j["threads"] = *g.threads;
  if (g.quad_nodes) j["quad_nodes"] = *g.quad_nodes;
  return experiment_from_json(j);
}

fs::path out_dir(const ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

int cmd_kernel(const ExperimentConfig& c) {
  const Dataset d = gen_dataset(c.dataset);
  if (d.train.size() < c.n_points) throw ConfigError("kernel: not enough train points");
  const auto layers = run_recursion(c.arch, d.train.inputs.topRows(c.n_points), c.kernel);
  const fs::path dir = out_dir(c);
  std::ofstream csv(dir / "kernels.csv");
  write_kernels_csv(csv, layers);
  write_kernels_blob((dir / "kernels.bin").string(), layers, {{"config_hash", config_hash(c)}});
  const Eigen::MatrixXd ntk = assemble_ntk(layers.back(), c.arch.n_models, c.train.gamma_mode, c.train.gamma_value);
  std::cout << "layers: " << layers.size() << ", points: " << c.n_points << ", ensemble NTK trace: " << ntk.trace()
            << '\n';
  return 0;
}

int cmd_train(const ExperimentConfig& c) {
  const Dataset d = gen_dataset(c.dataset);
  const Seed seed = split_rng(Seed{c.seed, 0}, 0);
  EnsembleParams final_params;
  const RunRecord rec = train_run(c.arch, d, c.train, seed, config_hash(c), 0, &final_params);
  const fs::path dir = out_dir(c);
  emit_report(dir.string(), {rec});
  save_checkpoint((dir / "params.ckpt").string(), {c.arch, seed, final_params});
  if (rec.diverged) {
    std::cerr << "training diverged: " << rec.note << '\n';
    return 2;
  }
  for (const auto& [k, v] : rec.metrics) std::cout << k << ": " << v << '\n';
  return 0;
}

int cmd_verify(const ExperimentConfig& c) {
  const VerifyReport r = run_verify(c);
  write_json(out_dir(c) / "verify.json", to_json(r));
  for (const auto& [ch, ok] : r.channel_pass) {
    std::cout << ch << ": " << (ok ? "pass" : "FAIL") << " (max rel err " << r.channel_max_rel_err.at(ch) << ")\n";
  }
  return 0;
}

int cmd_sweep(const ExperimentConfig& c, bool regime) {
  const auto runs = regime ? run_regime_sweep(c) : run_width_sweep(c);
  emit_report(out_dir(c).string(), runs);
  int diverged = 0;
  for (const auto& r : runs) diverged += r.diverged ? 1 : 0;
  std::cout << runs.size() << " runs, " << diverged << " diverged, reports in " << c.out_dir << '\n';
  return 0;
}

int cmd_dynamics(const ExperimentConfig& c) {
  const DynamicsReport r = run_dynamics_compare(c);
  const fs::path dir = out_dir(c);
  write_json(dir / "dynamics.json", to_json(r));
  std::ofstream csv(dir / "dynamics.csv");
  csv << "t,net_mse,kernel_mse,deviation\n";
  csv.precision(17);
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    csv << r.times[i] << ',' << r.net_mse[i] << ',' << r.kernel_mse[i] << ',' << r.deviation[i] << '\n';
  }
  std::cout << "max deviation before MSE halves: " << r.max_deviation_before_halving
            << (r.halving_index < 0 ? " (MSE never halved)" : "") << '\n';
  for (const auto& [m, v] : r.m_invariance) std::cout << "M=" << m << " max kernel trajectory gap: " << v << '\n';
  return 0;
}

int cmd_dataset(const ExperimentConfig& c) {
  const Dataset d = gen_dataset(c.dataset);
  const fs::path dir = out_dir(c);
  std::ofstream tr(dir / "train.csv"), te(dir / "test.csv");
  write_csv_split(tr, d.train, d.is_classification());
  write_csv_split(te, d.test, d.is_classification());
  std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test rows\n";
  return 0;
}

int cmd_match_gamma(const ExperimentConfig& c) {
  const GammaMatch g = match_gamma(c);
  emit_report(out_dir(c).string(), g.runs);
  json j;
  for (const auto& [m, v] : g.gamma) j[std::to_string(m)] = {{"best_lr", g.best_lr.at(m)}, {"gamma", v}};
  write_json(out_dir(c) / "gamma.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedded ensembles: finite-width training and infinite-width kernels"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config (built-in default if omitted)");
  app.add_option("--seed", g.seed, "Root seed (overrides config)");
  app.add_option("--out", g.out, "Output directory (overrides config)");
  app.add_option("--threads", g.threads, "Worker threads (overrides config)")->check(CLI::PositiveNumber);
  app.add_option("--quad-nodes", g.quad_nodes, "Gauss-Hermite nodes per dimension")->check(CLI::PositiveNumber);

  struct Sub {
    const char* name;
    const char* help;
    std::function<int(const ExperimentConfig&)> run;
  };
  const std::vector<Sub> subs = {
      {"kernel", "Run the GP/NTK recursion and export kernels", cmd_kernel},
      {"train", "Train one ensemble and save a checkpoint", cmd_train},
      {"verify", "Compare theory kernels with finite-width estimates", cmd_verify},
      {"sweep-regime", "Sweep modulation shift p and ensemble size M", [](const auto& c) { return cmd_sweep(c, true); }},
      {"sweep-width", "Sweep width factor and ensemble size M", [](const auto& c) { return cmd_sweep(c, false); }},
      {"dynamics", "Track finite-net training against kernel dynamics", cmd_dynamics},
      {"dataset", "Generate the configured dataset as CSV", cmd_dataset},
      {"match-gamma", "Grid-search learning rates and derive gamma(M)", cmd_match_gamma},
  };
  std::vector<CLI::App*> handles;
  for (const auto& s : subs) handles.push_back(app.add_subcommand(s.name, s.help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    const ExperimentConfig cfg = resolve(g);
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (handles[i]->parsed()) return subs[i].run(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
