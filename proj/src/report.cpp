#include "embens/report.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace embens {

using nlohmann::json;

json to_json(const MetricReport& r) {
  return {{"name", r.name}, {"keys", r.keys}, {"value", r.value}, {"stderr", r.stderr_}, {"n", r.n}};
}

MetricReport metric_from_json(const json& j) {
  MetricReport r;
  r.name = j.at("name").get<std::string>();
  r.keys = j.at("keys").get<std::map<std::string, double>>();
  r.value = j.at("value").get<double>();
  r.stderr_ = j.at("stderr").get<double>();
  r.n = j.at("n").get<int>();
  return r;
}

json to_json(const RunRecord& r) {
  return {{"config_hash", r.config_hash}, {"seed", r.seed}, {"keys", r.keys}, {"epochs", r.epochs},
          {"metrics", r.metrics}, {"diverged", r.diverged}, {"note", r.note}, {"wall_time", r.wall_time}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.keys = j.at("keys").get<std::map<std::string, double>>();
  r.epochs = j.at("epochs").get<std::vector<std::map<std::string, double>>>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.diverged = j.at("diverged").get<bool>();
  r.note = j.value("note", std::string());
  r.wall_time = j.value("wall_time", 0.0);
  return r;
}

namespace {

void put(std::ostream& os, double v) {
  if (std::isnan(v)) os << "nan";
  else os << v;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
  std::set<std::string> keys;
  for (const auto& r : reports) {
    for (const auto& [k, _] : r.keys) keys.insert(k);
  }
  os.precision(17);
  os << "name";
  for (const auto& k : keys) os << ',' << k;
  os << ",value,stderr,n\n";
  for (const auto& r : reports) {
    os << r.name;
    for (const auto& k : keys) {
      os << ',';
      if (auto it = r.keys.find(k); it != r.keys.end()) put(os, it->second);
    }
    os << ',';
    put(os, r.value);
    os << ',';
    put(os, r.stderr_);
    os << ',' << r.n << '\n';
  }
}

void write_runs_csv(std::ostream& os, const std::vector<RunRecord>& runs) {
  std::set<std::string> keys, metrics;
  for (const auto& r : runs) {
    for (const auto& [k, _] : r.keys) keys.insert(k);
    for (const auto& [k, _] : r.metrics) metrics.insert(k);
  }
  os.precision(17);
  os << "config_hash,seed,diverged";
  for (const auto& k : keys) os << ',' << k;
  for (const auto& k : metrics) os << ',' << k;
  os << ",wall_time\n";
  for (const auto& r : runs) {
    os << r.config_hash << ',' << r.seed << ',' << (r.diverged ? 1 : 0);
    for (const auto& k : keys) {
      os << ',';
      if (auto it = r.keys.find(k); it != r.keys.end()) put(os, it->second);
    }
    for (const auto& k : metrics) {
      os << ',';
      if (auto it = r.metrics.find(k); it != r.metrics.end()) put(os, it->second);
    }
    os << ',' << r.wall_time << '\n';
  }
}

json runs_to_json(const std::vector<RunRecord>& runs) {
  json arr = json::array();
  for (const auto& r : runs) arr.push_back(to_json(r));
  return arr;
}

std::vector<RunRecord> runs_from_json(const json& j) {
  std::vector<RunRecord> out;
  for (const auto& r : j) out.push_back(run_record_from_json(r));
  return out;
}

std::vector<MetricReport> aggregate(const std::vector<RunRecord>& runs) {
  struct Acc {
    std::map<std::string, std::vector<double>> values;
    int diverged = 0;
  };
  std::map<std::map<std::string, double>, Acc> groups;
  for (const auto& r : runs) {
    Acc& a = groups[r.keys];
    if (r.diverged) {
      ++a.diverged;
      continue;
    }
    for (const auto& [k, v] : r.metrics) {
      if (std::isfinite(v)) a.values[k].push_back(v);
    }
  }
  std::vector<MetricReport> out;
  for (const auto& [keys, acc] : groups) {
    for (const auto& [name, vals] : acc.values) {
      MetricReport m;
      m.name = name;
      m.keys = keys;
      m.n = static_cast<int>(vals.size());
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= m.n;
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      m.value = mean;
      m.stderr_ = m.n > 1 ? std::sqrt(ss / (m.n - 1) / m.n) : std::nan("");
      out.push_back(std::move(m));
    }
    MetricReport d;
    d.name = "diverged";
    d.keys = keys;
    d.value = acc.diverged;
    d.stderr_ = 0.0;
    d.n = acc.diverged;
    out.push_back(std::move(d));
  }
  return out;
}

void emit_report(const std::string& dir, const std::vector<RunRecord>& runs) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  {
    std::ofstream f(base / "runs.csv");
    write_runs_csv(f, runs);
  }
  {
    std::ofstream f(base / "runs.json");
    f << runs_to_json(runs).dump(2) << '\n';
  }
  {
    std::ofstream f(base / "metrics.csv");
    write_metrics_csv(f, aggregate(runs));
  }
}

namespace {

const char* const kChannels[] = {"sigma_same", "sigma_diff", "theta_com_same", "theta_com_diff", "theta_ind_same"};

const Eigen::MatrixXd& channel(const LayerKernels& k, int c) {
  switch (c) {
    case 0: return k.sigma_same;
    case 1: return k.sigma_diff;
    case 2: return k.theta_com_same;
    case 3: return k.theta_com_diff;
    default: return k.theta_ind_same;
  }
}

Eigen::MatrixXd& channel(LayerKernels& k, int c) {
  return const_cast<Eigen::MatrixXd&>(channel(static_cast<const LayerKernels&>(k), c));
}

constexpr char kKernMagic[8] = {'E', 'M', 'B', 'K', 'E', 'R', 'N', '1'};

}  // namespace

void write_kernels_csv(std::ostream& os, const std::vector<LayerKernels>& layers) {
  os.precision(17);
  os << "layer,row,col,channel,value\n";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (int c = 0; c < 5; ++c) {
      const Eigen::MatrixXd& m = channel(layers[l], c);
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          os << l + 1 << ',' << i << ',' << j << ',' << kChannels[c] << ',' << m(i, j) << '\n';
        }
      }
    }
  }
}

void write_kernels_blob(const std::string& path, const std::vector<LayerKernels>& layers, const json& meta) {
  json header;
  header["format"] = "embens-kernels";
  header["version"] = 1;
  header["meta"] = meta;
  json tensors = json::array();
  std::uint64_t off = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (int c = 0; c < 5; ++c) {
      const Eigen::MatrixXd& m = channel(layers[l], c);
      tensors.push_back({{"layer", l + 1}, {"channel", kChannels[c]}, {"rows", m.rows()}, {"cols", m.cols()},
                         {"offset", off}});
      off += static_cast<std::uint64_t>(m.size()) * sizeof(double);
    }
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kKernMagic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (const auto& k : layers) {
    for (int c = 0; c < 5; ++c) {
      const Eigen::MatrixXd& m = channel(k, c);
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
  }
  if (!out) throw std::runtime_error("failed writing: " + path);
}

std::vector<LayerKernels> read_kernels_blob(const std::string& path, json* meta) {
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kKernMagic, 8) != 0) throw ConfigError("not a kernel blob: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw ConfigError("corrupt kernel blob header: " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const json header = json::parse(text);
  if (meta) *meta = header.value("meta", json());
  const std::streamoff base = in.tellg();
  std::vector<LayerKernels> out;
  for (const auto& t : header.at("tensors")) {
    const std::size_t layer = t.at("layer").get<std::size_t>();
    if (layer > out.size()) out.resize(layer);
    const std::string name = t.at("channel").get<std::string>();
    int c = 0;
    while (c < 5 && name != kChannels[c]) ++c;
    if (c == 5) throw ConfigError("kernel blob: unknown channel " + name);
    Eigen::MatrixXd& m = channel(out[layer - 1], c);
    m.resize(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.seekg(base + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ConfigError("kernel blob truncated: " + path);
  }
  return out;
}

}  // namespace embens
