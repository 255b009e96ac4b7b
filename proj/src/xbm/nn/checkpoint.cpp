#include "xbm/nn/checkpoint.hpp"

#include <fstream>

#include "xbm/util/binio.hpp"
#include "xbm/util/checksum.hpp"
#include "xbm/util/error.hpp"

namespace xbm::nn {

namespace {
constexpr char kMagic[] = "XBMC";
constexpr std::uint16_t kVersion = 1;
}  // namespace

void Checkpoint::add(const std::string& prefix, std::span<ad::Parameter* const> params) {
  for (const ad::Parameter* p : params) {
    const std::string name = prefix + p->name;
    if (!tensors.emplace(name, p->value).second) fail(ErrorKind::state, "checkpoint: duplicate parameter " + name);
  }
}

bool Checkpoint::has_tree(const std::string& prefix) const {
  auto it = tensors.lower_bound(prefix);
  return it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

void Checkpoint::load(const std::string& prefix, std::span<ad::Parameter* const> params) const {
  std::size_t in_tree = 0;
  for (auto it = tensors.lower_bound(prefix); it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
       ++it)
    ++in_tree;
  if (in_tree != params.size())
    fail(ErrorKind::data, "checkpoint tree '" + prefix + "' has " + std::to_string(in_tree) + " tensors, model has " +
                              std::to_string(params.size()));
  for (ad::Parameter* p : params) {
    auto it = tensors.find(prefix + p->name);
    if (it == tensors.end()) fail(ErrorKind::data, "checkpoint is missing " + prefix + p->name);
    if (it->second.shape() != p->value.shape())
      fail(ErrorKind::data, "checkpoint shape mismatch for " + it->first + ": " + ad::shape_str(it->second.shape()) +
                                " vs " + ad::shape_str(p->value.shape()));
    p->value = it->second;
  }
}

std::vector<unsigned char> Checkpoint::serialize() const {
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put(kVersion);
  w.put_string(config_text);
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.put_string(name);
    w.put(static_cast<std::uint16_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.put(v);
  }
  return w.bytes();
}

void Checkpoint::write(const std::filesystem::path& path) const {
  const auto b = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) fail(ErrorKind::io, "write failed: " + path.string());
}

std::string Checkpoint::checksum() const { return sha256_hex(serialize()); }

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  if (r.get_bytes(4) != std::string_view(kMagic, 4)) fail(ErrorKind::data, path.string() + ": not a checkpoint");
  if (r.get<std::uint16_t>() != kVersion) fail(ErrorKind::data, path.string() + ": unsupported checkpoint version");
  Checkpoint c;
  c.config_text = r.get_string();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string();
    const int rank = r.get<std::uint16_t>();
    ad::Shape shape;
    for (int k = 0; k < rank; ++k) shape.push_back(r.get<std::uint32_t>());
    if (rank == 0 || ad::numel(shape) <= 0) fail(ErrorKind::data, path.string() + ": bad tensor shape for " + name);
    ad::Tensor t(shape);
    for (auto& v : t.data()) v = r.get<double>();
    c.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.at_end()) fail(ErrorKind::data, path.string() + ": trailing bytes");
  return c;
}

double squared_distance(std::span<ad::Parameter* const> a, std::span<ad::Parameter* const> b) {
  if (a.size() != b.size()) fail(ErrorKind::invalid_argument, "parameter trees differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name || a[i]->value.shape() != b[i]->value.shape())
      fail(ErrorKind::invalid_argument, "parameter trees differ at " + a[i]->name);
    for (std::int64_t k = 0; k < a[i]->value.size(); ++k) {
      const double d = a[i]->value[k] - b[i]->value[k];
      s += d * d;
    }
  }
  return s;
}

}  // namespace xbm::nn
