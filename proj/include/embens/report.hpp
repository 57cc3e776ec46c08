#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "embens/kernel_theory.hpp"

namespace embens {

/// One aggregated measurement. Grouping keys are numeric (width, M, p, ...).
struct MetricReport {
  std::string name;
  std::map<std::string, double> keys;
  double value = 0.0;
  double stderr_ = 0.0;
  int n = 1;
};

/// Result of one (config, seed) run.
struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, double> keys;
  std::vector<std::map<std::string, double>> epochs;  // per-epoch scalar metrics
  std::map<std::string, double> metrics;              // final metrics
  bool diverged = false;
  std::string note;
  double wall_time = 0.0;
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Columns: name, sorted union of key names, value, stderr, n.
void write_metrics_csv(std::ostream& os, const std::vector<MetricReport>& reports);
/// Columns: config_hash, seed, diverged, sorted key names, sorted metric names, wall_time.
void write_runs_csv(std::ostream& os, const std::vector<RunRecord>& runs);
nlohmann::json runs_to_json(const std::vector<RunRecord>& runs);
std::vector<RunRecord> runs_from_json(const nlohmann::json& j);

/// Groups non-diverged runs by their keys and reports mean and standard
/// error of every metric. Diverged runs are counted under "diverged".
std::vector<MetricReport> aggregate(const std::vector<RunRecord>& runs);

/// Writes runs.csv, runs.json and metrics.csv into `dir` (created if needed).
void emit_report(const std::string& dir, const std::vector<RunRecord>& runs);

/// CSV with header layer,row,col,channel,value; layer counts from 1.
void write_kernels_csv(std::ostream& os, const std::vector<LayerKernels>& layers);

/// Magic "EMBKERN1", little-endian u64 header length, JSON header listing
/// tensors, then float64 column-major data.
void write_kernels_blob(const std::string& path, const std::vector<LayerKernels>& layers,
                        const nlohmann::json& meta = {});
std::vector<LayerKernels> read_kernels_blob(const std::string& path, nlohmann::json* meta = nullptr);

}  // namespace embens
