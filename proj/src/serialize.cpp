// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "lodnerf/errors.hpp"
#include "lodnerf/scene_io.hpp"

namespace lodnerf {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace {

constexpr std::uint32_t kOptimizerMagic = 0x41444f4cu;  // "LODA"

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    const auto* p = reinterpret_cast<const unsigned char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_floats(std::span<const float> values) {
    const auto* p = reinterpret_cast<const unsigned char*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }
  void seal_and_write(const fs::path& path) {
    put(static_cast<std::uint32_t>(crc32(0L, bytes_.data(), static_cast<uInt>(bytes_.size()))));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
  }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  // Reads the whole file and verifies the CRC32 trailer.
  explicit ByteReader(const fs::path& path) : name_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(name_, 0, "cannot open file");
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (bytes_.size() < 4) throw ChecksumMismatch(name_ + ": file too short");
    std::uint32_t stored;
    std::memcpy(&stored, bytes_.data() + bytes_.size() - 4, 4);
    bytes_.resize(bytes_.size() - 4);
    const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes_.data(), static_cast<uInt>(bytes_.size())));
    if (stored != actual) throw ChecksumMismatch(name_ + ": CRC32 mismatch");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  void get_floats(std::span<float> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& name() const { return name_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ChecksumMismatch(name_ + ": truncated payload");
  }
  std::string name_;
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

void write_blob(const fs::path& path, const RadianceField& field) {
  if (field.resolution() > 0xffff) throw std::invalid_argument("write_blob: resolution too large");
  ByteWriter w;
  w.put(kBlobMagic);
  w.put(kBlobVersion);
  w.put(static_cast<std::uint16_t>(field.resolution()));
  w.put(static_cast<std::uint32_t>(field.n_appearance()));
  w.put(static_cast<std::uint32_t>(field.param_count()));
  w.put_floats(field.params());
  w.seal_and_write(path);
}

RadianceField read_blob(const fs::path& path) {
  ByteReader r(path);
  if (r.get<std::uint32_t>() != kBlobMagic) throw ParseError(r.name(), 0, "bad blob magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kBlobVersion) {
    throw VersionMismatch(r.name() + ": blob version " + std::to_string(version) + ", expected " +
                          std::to_string(kBlobVersion));
  }
  const auto resolution = r.get<std::uint16_t>();
  const auto n_app = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  RadianceField field(resolution, static_cast<int>(n_app));
  if (field.param_count() != count) throw ParseError(r.name(), 0, "parameter count disagrees with header");
  r.get_floats(field.params());
  if (!r.done()) throw ChecksumMismatch(r.name() + ": trailing bytes");
  return field;
}

}  // namespace

void save_tree(const std::string& dir, const LodTree& tree) {
  const fs::path root(dir);
  fs::create_directories(root);
  json nodes = json::array();
  for (const OctreeNode& n : tree.nodes()) {
    json j{{"id", n.id.name()},
           {"level", n.id.level},
           {"ix", n.id.ix},
           {"iy", n.id.iy},
           {"iz", n.id.iz},
           {"aabb_min", vec_json(n.aabb.min_corner())},
           {"aabb_max", vec_json(n.aabb.max_corner())},
           {"gsd", n.gsd},
           {"param_bytes", n.param_bytes()}};
    if (n.field) {
      const std::string blob = n.id.name() + ".bin";
      write_blob(root / blob, *n.field);
      j["blob"] = blob;
      j["resolution"] = n.field->resolution();
      j["n_appearance"] = n.field->n_appearance();
    } else {
      j["blob"] = nullptr;
    }
    nodes.push_back(std::move(j));
  }
  const json manifest{{"format", "lodnerf-tree"},
                      {"version", kManifestVersion},
                      {"root_aabb", {{"min", vec_json(tree.root_aabb().min_corner())},
                                     {"max", vec_json(tree.root_aabb().max_corner())}}},
                      {"grid_size", tree.grid_size()},
                      {"max_depth", tree.max_depth()},
                      {"total_param_bytes", tree.total_param_bytes()},
                      {"nodes", nodes}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw std::runtime_error("save_tree: cannot write manifest in " + dir);
  out << manifest.dump(1) << '\n';
}

LodTree load_tree(const std::string& dir) {
  const fs::path root(dir);
  const std::string path = (root / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open manifest");
  json m;
  try {
    m = json::parse(in);
    if (m.at("format").get<std::string>() != "lodnerf-tree") throw ParseError(path, 0, "not a tree manifest");
    const int version = m.at("version").get<int>();
    if (version != kManifestVersion) {
      throw VersionMismatch(path + ": manifest version " + std::to_string(version) + ", expected " +
                            std::to_string(kManifestVersion));
    }
    std::vector<NodeId> ids;
    for (const auto& n : m.at("nodes")) ids.push_back(NodeId::parse(n.at("id").get<std::string>()));
    const Aabb box(json_vec(m.at("root_aabb").at("min")), json_vec(m.at("root_aabb").at("max")));
    LodTree tree(box, m.at("grid_size").get<int>(), m.at("max_depth").get<int>(), ids);
    for (const auto& n : m.at("nodes")) {
      if (n.at("blob").is_null()) continue;
      const std::size_t idx = tree.index_of(NodeId::parse(n.at("id").get<std::string>()));
      tree.node(idx).field = read_blob(root / n.at("blob").get<std::string>());
      if (tree.node(idx).param_bytes() != n.at("param_bytes").get<std::uint64_t>()) {
        throw ParseError(path, 0, "param_bytes disagrees with blob for " + tree.node(idx).id.name());
      }
    }
    return tree;
  } catch (const json::exception& e) {
    throw ParseError(path, 0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(path, 0, e.what());
  }
}

void save_checkpoint(const std::string& dir, const LodTree& tree, const AdamState& adam) {
  save_tree(dir, tree);
  ByteWriter w;
  w.put(kOptimizerMagic);
  w.put(kBlobVersion);
  w.put(std::uint16_t{0});
  w.put(static_cast<std::uint64_t>(adam.step()));
  const auto& moments = adam.moments();
  std::uint32_t present = 0;
  for (const auto& mo : moments) present += mo ? 1 : 0;
  w.put(static_cast<std::uint32_t>(moments.size()));
  w.put(present);
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (!moments[i]) continue;
    w.put(static_cast<std::uint32_t>(i));
    w.put(static_cast<std::uint32_t>(moments[i]->m.size()));
    w.put_floats(moments[i]->m);
    w.put_floats(moments[i]->v);
  }
  w.seal_and_write(fs::path(dir) / "optimizer.bin");
}

AdamState load_optimizer_state(const std::string& dir, const LodTree& tree) {
  ByteReader r(fs::path(dir) / "optimizer.bin");
  if (r.get<std::uint32_t>() != kOptimizerMagic) throw ParseError(r.name(), 0, "bad optimizer magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kBlobVersion) throw VersionMismatch(r.name() + ": optimizer version " + std::to_string(version));
  r.get<std::uint16_t>();
  AdamState adam(tree);
  adam.set_step(r.get<std::uint64_t>());
  const auto n_nodes = r.get<std::uint32_t>();
  if (n_nodes != tree.size()) throw ParseError(r.name(), 0, "node count disagrees with tree");
  const auto present = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < present; ++k) {
    const auto idx = r.get<std::uint32_t>();
    const auto count = r.get<std::uint32_t>();
    if (idx >= tree.size()) throw ParseError(r.name(), 0, "node index out of range");
    AdamMoments mo{std::vector<float>(count), std::vector<float>(count)};
    r.get_floats(mo.m);
    r.get_floats(mo.v);
    adam.moments()[idx] = std::move(mo);
  }
  if (!r.done()) throw ChecksumMismatch(r.name() + ": trailing bytes");
  return adam;
}

}  // namespace lodnerf
