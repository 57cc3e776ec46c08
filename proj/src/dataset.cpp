#include "embens/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace embens {

using Eigen::MatrixXd;
using nlohmann::json;

void DatasetSpec::validate() const {
  if (n_train < 1 || n_test < 1) throw ConfigError("dataset: n_train and n_test must be >= 1");
  switch (kind) {
    case Kind::blobs:
      if (n_classes < 2 || dim < 1) throw ConfigError("dataset: blobs need n_classes >= 2 and dim >= 1");
      if (dim < 2 && n_classes > 2) throw ConfigError("dataset: 1-D blobs support two classes");
      if (!(noise >= 0.0)) throw ConfigError("dataset: noise must be >= 0");
      break;
    case Kind::spirals:
      if (n_classes < 2) throw ConfigError("dataset: spirals need n_classes >= 2");
      if (!(noise >= 0.0)) throw ConfigError("dataset: noise must be >= 0");
      break;
    case Kind::teacher:
      if (dim < 1) throw ConfigError("dataset: teacher needs dim >= 1");
      if (teacher && teacher->input_dim != dim) throw ConfigError("dataset: teacher input_dim must equal dim");
      break;
    case Kind::csv:
      if (path.empty()) throw ConfigError("dataset: csv needs a path");
      break;
  }
}

std::string to_string(DatasetSpec::Kind k) {
  switch (k) {
    case DatasetSpec::Kind::blobs: return "blobs";
    case DatasetSpec::Kind::spirals: return "spirals";
    case DatasetSpec::Kind::teacher: return "teacher";
    case DatasetSpec::Kind::csv: return "csv";
  }
  return "?";
}

DatasetSpec::Kind parse_dataset_kind(const std::string& s) {
  if (s == "blobs") return DatasetSpec::Kind::blobs;
  if (s == "spirals") return DatasetSpec::Kind::spirals;
  if (s == "teacher") return DatasetSpec::Kind::teacher;
  if (s == "csv") return DatasetSpec::Kind::csv;
  throw ConfigError("unknown dataset kind: " + s);
}

json to_json(const DatasetSpec& s) {
  json j = {{"kind", to_string(s.kind)}, {"n_classes", s.n_classes}, {"dim", s.dim},
            {"separation", s.separation}, {"noise", s.noise}, {"n_train", s.n_train},
            {"n_test", s.n_test}, {"seed", s.seed}};
  if (!s.path.empty()) j["path"] = s.path;
  if (s.teacher) j["teacher"] = to_json(*s.teacher);
  if (s.kind == DatasetSpec::Kind::csv) j["has_header"] = s.has_header;
  return j;
}

DatasetSpec dataset_spec_from_json(const json& j) {
  try {
    DatasetSpec s;
    s.kind = parse_dataset_kind(j.value("kind", std::string("blobs")));
    s.n_classes = j.value("n_classes", s.n_classes);
    s.dim = j.value("dim", s.dim);
    s.separation = j.value("separation", s.separation);
    s.noise = j.value("noise", s.noise);
    s.n_train = j.value("n_train", s.n_train);
    s.n_test = j.value("n_test", s.n_test);
    s.seed = j.value("seed", s.seed);
    s.path = j.value("path", std::string());
    s.has_header = j.value("has_header", true);
    if (j.contains("teacher")) s.teacher = arch_from_json(j.at("teacher"));
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

namespace {

Batch blobs(const DatasetSpec& s, int n, Rng& rng) {
  Batch b;
  b.inputs = MatrixXd::Zero(n, s.dim);
  for (int r = 0; r < n; ++r) {
    const int c = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(s.n_classes));
    if (s.dim == 1) {
      b.inputs(r, 0) = c == 0 ? -s.separation : s.separation;
    } else {
      const double ang = 2.0 * std::numbers::pi * c / s.n_classes;
      b.inputs(r, 0) = s.separation * std::cos(ang);
      b.inputs(r, 1) = s.separation * std::sin(ang);
    }
    for (int d = 0; d < s.dim; ++d) b.inputs(r, d) += s.noise * rng.normal();
    b.labels.push_back(c);
  }
  return b;
}

Batch spirals(const DatasetSpec& s, int n, Rng& rng) {
  Batch b;
  b.inputs = MatrixXd::Zero(n, std::max(2, s.dim));
  for (int r = 0; r < n; ++r) {
    const int c = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(s.n_classes));
    const double t = rng.uniform();
    const double ang = 3.0 * std::numbers::pi * t + 2.0 * std::numbers::pi * c / s.n_classes;
    b.inputs(r, 0) = t * std::cos(ang) + s.noise * rng.normal();
    b.inputs(r, 1) = t * std::sin(ang) + s.noise * rng.normal();
    b.labels.push_back(c);
  }
  return b;
}

Batch teacher(const ArchSpec& arch, const EnsembleParams& p, int n, Rng& rng) {
  Batch b;
  b.inputs.resize(n, arch.input_dim);
  rng.fill_normal(b.inputs);
  b.targets = forward_model(p, arch, 0, b.inputs).out;
  return b;
}

}  // namespace

Dataset gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  const Seed root{spec.seed, 0};
  Rng train_rng(split_rng(root, 1));
  Rng test_rng(split_rng(root, 2));
  Dataset d;
  switch (spec.kind) {
    case DatasetSpec::Kind::blobs:
      d.train = blobs(spec, spec.n_train, train_rng);
      d.test = blobs(spec, spec.n_test, test_rng);
      d.n_classes = spec.n_classes;
      break;
    case DatasetSpec::Kind::spirals:
      d.train = spirals(spec, spec.n_train, train_rng);
      d.test = spirals(spec, spec.n_test, test_rng);
      d.n_classes = spec.n_classes;
      break;
    case DatasetSpec::Kind::teacher: {
      ArchSpec arch = spec.teacher ? *spec.teacher
                                   : make_mlp(spec.dim, {256}, 1, Activation::relu, 1, std::nullopt, std::nullopt);
      arch.n_models = 1;
      const EnsembleParams p = init_params(arch, split_rng(root, 3));
      d.train = teacher(arch, p, spec.n_train, train_rng);
      d.test = teacher(arch, p, spec.n_test, test_rng);
      d.n_classes = 0;
      break;
    }
    case DatasetSpec::Kind::csv: {
      std::ifstream in(spec.path);
      if (!in) throw ConfigError("cannot open dataset csv: " + spec.path);
      d = read_csv_dataset(in, spec.n_train, spec.n_test, spec.has_header);
      break;
    }
  }
  return d;
}

Dataset read_csv_dataset(std::istream& in, int n_train, int n_test, bool has_header) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
    if (lineno == 1 && has_header) continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError("csv line " + std::to_string(lineno) + ": cannot parse '" + cell + "'");
      }
    }
    if (vals.size() < 2) throw ConfigError("csv line " + std::to_string(lineno) + ": need features and a label");
    if (width == 0) width = vals.size();
    if (vals.size() != width) {
      throw ConfigError("csv line " + std::to_string(lineno) + ": expected " + std::to_string(width) + " columns");
    }
    rows.push_back(std::move(vals));
  }
  if (n_train + n_test > static_cast<int>(rows.size())) {
    throw ConfigError("csv: requested " + std::to_string(n_train + n_test) + " rows but file has " +
                      std::to_string(rows.size()));
  }
  bool integral = true;
  int max_label = 0;
  for (const auto& r : rows) {
    const double y = r.back();
    if (y != std::floor(y) || y < 0.0) integral = false;
    else max_label = std::max(max_label, static_cast<int>(y));
  }
  const int dim = static_cast<int>(width) - 1;
  auto fill = [&](int start, int count) {
    Batch b;
    b.inputs.resize(count, dim);
    if (!integral) b.targets.resize(count, 1);
    for (int r = 0; r < count; ++r) {
      const auto& v = rows[start + r];
      for (int c = 0; c < dim; ++c) b.inputs(r, c) = v[c];
      if (integral) b.labels.push_back(static_cast<int>(v.back()));
      else b.targets(r, 0) = v.back();
    }
    return b;
  };
  Dataset d;
  d.train = fill(0, n_train);
  d.test = fill(n_train, n_test);
  d.n_classes = integral ? max_label + 1 : 0;
  return d;
}

void write_csv_split(std::ostream& os, const Batch& b, bool classification) {
  os.precision(17);
  for (Eigen::Index c = 0; c < b.inputs.cols(); ++c) os << 'x' << c << ',';
  os << (classification ? "label" : "target") << '\n';
  for (Eigen::Index r = 0; r < b.inputs.rows(); ++r) {
    for (Eigen::Index c = 0; c < b.inputs.cols(); ++c) os << b.inputs(r, c) << ',';
    if (classification) os << b.labels[r] << '\n';
    else os << b.targets(r, 0) << '\n';
  }
}

}  // namespace embens
