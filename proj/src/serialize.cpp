#include "longtail/serialize.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace longtail {

using nlohmann::json;

uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_checksum: cannot open " + path);
  uint64_t h = kFnvOffset;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
  return h;
}

uint64_t mat_checksum(const Mat& m, uint64_t h) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      uint64_t u;
      const double v = m(i, j);
      std::memcpy(&u, &v, 8);
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(u >> (8 * k));
      h = fnv1a(b, 8, h);
    }
  return h;
}

namespace {

std::vector<uint32_t> config_words(const EncoderConfig& cfg) {
  return {static_cast<uint32_t>(cfg.depth),
          static_cast<uint32_t>(cfg.width),
          static_cast<uint32_t>(cfg.heads),
          static_cast<uint32_t>(cfg.head_width),
          static_cast<uint32_t>(cfg.bottleneck),
          static_cast<uint32_t>(cfg.grid),
          static_cast<uint32_t>(cfg.patch),
          static_cast<uint32_t>(cfg.mode)};
}

std::string manifest_path(const std::string& path) {
  return path + ".manifest.json";
}

}  // namespace

void save_encoder_snapshot(const std::string& path, const EncoderParams& p) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("save_encoder_snapshot: cannot open " + path);

  put_u32_le(out, kSnapshotMagic);
  put_u32_le(out, kSnapshotVersion);
  for (uint32_t w : config_words(p.config)) put_u32_le(out, w);

  json arrays = json::array();
  uint64_t offset = 4u * (2 + 8);
  // const_cast only to reuse the canonical parameter enumeration; values are
  // not modified
  for (Param* q : encoder_params(const_cast<EncoderParams&>(p))) {
    const Mat& m = q->value;
    arrays.push_back({{"name", q->name},
                      {"offset", offset},
                      {"shape", {m.rows(), m.cols()}}});
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) put_f64_le(out, m(i, j));
    offset += 8u * static_cast<uint64_t>(m.size());
  }
  if (!out)
    throw std::runtime_error("save_encoder_snapshot: write failed on " + path);
  out.close();

  json manifest = {{"magic", kSnapshotMagic},
                   {"version", kSnapshotVersion},
                   {"config",
                    {{"depth", p.config.depth},
                     {"width", p.config.width},
                     {"heads", p.config.heads},
                     {"head_width", p.config.head_width},
                     {"bottleneck", p.config.bottleneck},
                     {"grid", p.config.grid},
                     {"patch", p.config.patch},
                     {"mode", to_string(p.config.mode)}}},
                   {"arrays", arrays}};
  std::ofstream mout(manifest_path(path), std::ios::trunc);
  if (!mout)
    throw std::runtime_error("save_encoder_snapshot: cannot open " +
                             manifest_path(path));
  mout << manifest.dump(2) << "\n";
}

EncoderParams load_encoder_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("load_encoder_snapshot: cannot open " + path);

  if (get_u32_le(in) != kSnapshotMagic)
    throw std::runtime_error("load_encoder_snapshot: bad magic in " + path);
  if (get_u32_le(in) != kSnapshotVersion)
    throw std::runtime_error("load_encoder_snapshot: unsupported version in " +
                             path);
  EncoderConfig cfg;
  cfg.depth = static_cast<int>(get_u32_le(in));
  cfg.width = static_cast<int>(get_u32_le(in));
  cfg.heads = static_cast<int>(get_u32_le(in));
  cfg.head_width = static_cast<int>(get_u32_le(in));
  cfg.bottleneck = static_cast<int>(get_u32_le(in));
  cfg.grid = static_cast<int>(get_u32_le(in));
  cfg.patch = static_cast<int>(get_u32_le(in));
  cfg.mode = static_cast<BlockMode>(get_u32_le(in));
  if (!in)
    throw std::runtime_error("load_encoder_snapshot: truncated header in " +
                             path);

  std::ifstream min(manifest_path(path));
  if (!min)
    throw std::runtime_error("load_encoder_snapshot: missing manifest " +
                             manifest_path(path));
  json manifest = json::parse(min);

  EncoderParams p = make_encoder(cfg, /*seed=*/0);
  std::map<std::string, Param*> by_name;
  for (Param* q : encoder_params(p)) by_name[q->name] = q;

  size_t seen = 0;
  for (const auto& entry : manifest.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("load_encoder_snapshot: unexpected array " +
                               name);
    Mat& m = it->second->value;
    const auto shape = entry.at("shape");
    if (shape.size() != 2 || shape[0].get<Index>() != m.rows() ||
        shape[1].get<Index>() != m.cols())
      throw std::runtime_error("load_encoder_snapshot: shape mismatch for " +
                               name);
    in.seekg(static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = get_f64_le(in);
    if (!in)
      throw std::runtime_error("load_encoder_snapshot: truncated array " +
                               name);
    ++seen;
  }
  if (seen != by_name.size())
    throw std::runtime_error("load_encoder_snapshot: manifest lists " +
                             std::to_string(seen) + " arrays, expected " +
                             std::to_string(by_name.size()));
  return p;
}

}  // namespace longtail
