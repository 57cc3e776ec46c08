#include "embens/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace embens {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'M', 'B', 'E', 'N', 'S', '0', '1'};
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Entry {
  std::string name;
  const Eigen::MatrixXd* m;
};

std::vector<Entry> entries(const EnsembleParams& p) {
  std::vector<Entry> out;
  for (std::size_t l = 0; l < p.weights.size(); ++l) out.push_back({"W" + std::to_string(l + 1), &p.weights[l]});
  for (std::size_t l = 0; l < p.post.size(); ++l) out.push_back({"u" + std::to_string(l), &p.post[l]});
  for (std::size_t l = 1; l < p.pre.size(); ++l) out.push_back({"v" + std::to_string(l), &p.pre[l]});
  return out;
}

Eigen::MatrixXd* slot(EnsembleParams& p, const std::string& name) {
  if (name.size() < 2) return nullptr;
  const std::size_t idx = std::stoul(name.substr(1));
  switch (name[0]) {
    case 'W': return idx >= 1 && idx <= p.weights.size() ? &p.weights[idx - 1] : nullptr;
    case 'u': return idx < p.post.size() ? &p.post[idx] : nullptr;
    case 'v': return idx >= 1 && idx < p.pre.size() ? &p.pre[idx] : nullptr;
    default: return nullptr;
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json header;
  header["format"] = "embens-checkpoint";
  header["version"] = kVersion;
  header["arch"] = to_json(ck.arch);
  header["seed"] = {{"root", ck.seed.root}, {"stream", ck.seed.stream}};
  json tensors = json::array();
  std::uint64_t offset = 0;
  const auto list = entries(ck.params);
  for (const auto& e : list) {
    tensors.push_back({{"name", e.name}, {"rows", e.m->rows()}, {"cols", e.m->cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.m->size()) * sizeof(double);
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : list) {
    out.write(reinterpret_cast<const char*>(e.m->data()), static_cast<std::streamsize>(e.m->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ConfigError("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw ConfigError("corrupt checkpoint header: " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ConfigError("truncated checkpoint header: " + path);

  Checkpoint ck;
  try {
    const json header = json::parse(text);
    if (header.at("version").get<int>() != kVersion) throw ConfigError("unsupported checkpoint version");
    ck.arch = arch_from_json(header.at("arch"));
    ck.seed = {header.at("seed").at("root").get<std::uint64_t>(), header.at("seed").at("stream").get<std::uint64_t>()};
    const int depth = ck.arch.depth();
    ck.params.weights.resize(depth + 1);
    ck.params.post.resize(depth + 1);
    ck.params.pre.resize(depth + 2);
    const std::streamoff base = in.tellg();
    for (const auto& t : header.at("tensors")) {
      Eigen::MatrixXd* m = slot(ck.params, t.at("name").get<std::string>());
      if (!m) throw ConfigError("unknown tensor in checkpoint: " + t.at("name").get<std::string>());
      m->resize(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
      in.seekg(base + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
      in.read(reinterpret_cast<char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
      if (!in) throw ConfigError("truncated checkpoint data: " + path);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint header: ") + e.what());
  }
  return ck;
}

}  // namespace embens
