#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"

#include "embens/arch.hpp"
#include "embens/ensemble_net.hpp"
#include "embens/numerics.hpp"

namespace embens {

struct DatasetSpec {
  enum class Kind { blobs, spirals, teacher, csv };

  Kind kind = Kind::blobs;
  int n_classes = 2;
  int dim = 2;
  double separation = 3.0;  // blobs: radius of the circle of class centers
  double noise = 1.0;       // blobs: per-coordinate std; spirals: jitter std
  int n_train = 256;
  int n_test = 256;
  std::uint64_t seed = 0;
  std::string path;                   // csv
  std::optional<ArchSpec> teacher;    // teacher; default one hidden ReLU layer of width 256
  bool has_header = true;             // csv

  void validate() const;
};

std::string to_string(DatasetSpec::Kind k);
DatasetSpec::Kind parse_dataset_kind(const std::string& s);
nlohmann::json to_json(const DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

/// Deterministic in the spec (including its seed).
Dataset gen_dataset(const DatasetSpec& spec);

/// Reads "features..., label" rows. Integer-valued final columns make a
/// classification set. Throws ConfigError naming the offending line.
Dataset read_csv_dataset(std::istream& in, int n_train, int n_test, bool has_header = true);

/// Writes one split with a header row: x0..x{d-1},label (or target).
void write_csv_split(std::ostream& os, const Batch& b, bool classification);

}  // namespace embens
