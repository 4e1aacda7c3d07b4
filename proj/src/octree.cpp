// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/octree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "lodnerf/errors.hpp"
#include "lodnerf/rng.hpp"

namespace lodnerf {

namespace {
constexpr double kSceneTol = 1e-9;
}

std::string NodeId::name() const {
  return "L" + std::to_string(level) + "_" + std::to_string(ix) + "_" + std::to_string(iy) + "_" +
         std::to_string(iz);
}

NodeId NodeId::parse(const std::string& name) {
  NodeId id;
  char tail = 0;
  if (std::sscanf(name.c_str(), "L%d_%d_%d_%d%c", &id.level, &id.ix, &id.iy, &id.iz, &tail) != 4 ||
      !id.is_valid()) {
    throw std::invalid_argument("NodeId::parse: malformed node name '" + name + "'");
  }
  return id;
}

NodeId NodeId::parent() const {
  if (level == 0) throw std::logic_error("NodeId::parent: root has no parent");
  return {level - 1, ix >> 1, iy >> 1, iz >> 1};
}

NodeId NodeId::child(int octant) const {
  return {level + 1, 2 * ix + (octant & 1), 2 * iy + ((octant >> 1) & 1), 2 * iz + ((octant >> 2) & 1)};
}

bool NodeId::is_valid() const {
  if (level < 0 || level > 30) return false;
  const int n = 1 << level;
  return ix >= 0 && iy >= 0 && iz >= 0 && ix < n && iy < n && iz < n;
}

std::size_t NodeIdHash::operator()(const NodeId& id) const noexcept {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(id.level));
  h = mix64(h ^ static_cast<std::uint64_t>(id.ix));
  h = mix64(h ^ static_cast<std::uint64_t>(id.iy));
  return mix64(h ^ static_cast<std::uint64_t>(id.iz));
}

bool OctreeNode::has_children() const {
  return std::any_of(children.begin(), children.end(), [](std::int32_t c) { return c != kNoChild; });
}

double node_gsd(double aabb_edge, int grid_size) {
  if (!(aabb_edge > 0.0) || grid_size < 1) throw std::invalid_argument("node_gsd: need edge > 0, grid_size >= 1");
  return aabb_edge / grid_size;
}

int select_level(double root_gsd, double perturbed_radius, int max_depth) {
  if (!(root_gsd > 0.0) || !(perturbed_radius > 0.0)) {
    throw std::invalid_argument("select_level: gsd and radius must be > 0");
  }
  const double raw = std::floor(std::log2(root_gsd / perturbed_radius));
  if (raw <= 0.0) return 0;
  if (raw >= max_depth) return max_depth;
  return static_cast<int>(raw);
}

LodTree::LodTree(const Aabb& root_aabb, int grid_size, int max_depth, std::span<const NodeId> ids)
    : root_aabb_(root_aabb), grid_size_(grid_size), max_depth_(max_depth) {
  if (!root_aabb.is_cube()) throw std::invalid_argument("LodTree: root AABB must be a cube");
  if (grid_size < 1) throw std::invalid_argument("LodTree: grid_size must be >= 1");
  if (max_depth < 0) throw std::invalid_argument("LodTree: max_depth must be >= 0");
  std::vector<NodeId> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.empty() || sorted.front() != NodeId{}) throw std::invalid_argument("LodTree: root node missing");

  nodes_.reserve(sorted.size());
  for (const NodeId& id : sorted) {
    if (!id.is_valid() || id.level > max_depth) {
      throw std::invalid_argument("LodTree: node " + id.name() + " out of range");
    }
    const Aabb box = node_aabb(id);
    OctreeNode node{id, box, node_gsd(box.edge(), grid_size), kNoChild, {}, std::nullopt};
    node.children.fill(kNoChild);
    index_.emplace(id, nodes_.size());
    nodes_.push_back(std::move(node));
  }
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    const NodeId pid = nodes_[i].id.parent();
    const auto it = index_.find(pid);
    if (it == index_.end()) {
      throw std::invalid_argument("LodTree: node " + nodes_[i].id.name() + " has no retained parent");
    }
    nodes_[i].parent = static_cast<std::int32_t>(it->second);
    nodes_[it->second].children[nodes_[i].id.octant()] = static_cast<std::int32_t>(i);
  }
}

std::optional<std::size_t> LodTree::find(const NodeId& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t LodTree::index_of(const NodeId& id) const {
  const auto i = find(id);
  if (!i) throw UnknownNode("unknown node " + id.name());
  return *i;
}

std::vector<NodeId> LodTree::ids() const {
  std::vector<NodeId> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.id);
  return out;
}

std::uint64_t LodTree::total_param_bytes() const {
  std::uint64_t total = 0;
  for (const auto& n : nodes_) total += n.param_bytes();
  return total;
}

int LodTree::depth() const { return nodes_.back().id.level; }

std::uint64_t LodTree::perfect_node_count() const {
  std::uint64_t count = 0;
  for (int l = 0; l <= max_depth_; ++l) count += std::uint64_t{1} << (3 * l);
  return count;
}

Vec3 LodTree::normalized(const Vec3& x_world) const {
  const Vec3 u = (x_world - root_aabb_.min_corner()) / root_aabb_.edge();
  if ((u.array() < -kSceneTol).any() || (u.array() > 1.0 + kSceneTol).any()) {
    throw PointOutsideScene("point outside the root AABB");
  }
  return u.cwiseMax(0.0).cwiseMin(1.0);
}

Aabb LodTree::node_aabb(const NodeId& id) const {
  const double edge = std::ldexp(root_aabb_.edge(), -id.level);
  const Vec3 lo = root_aabb_.min_corner() + edge * Vec3(id.ix, id.iy, id.iz);
  // Snap the far face of the last cell onto the root face to avoid drift.
  Vec3 hi = lo + Vec3::Constant(edge);
  const int last = (1 << id.level) - 1;
  if (id.ix == last) hi.x() = root_aabb_.max_corner().x();
  if (id.iy == last) hi.y() = root_aabb_.max_corner().y();
  if (id.iz == last) hi.z() = root_aabb_.max_corner().z();
  return Aabb(lo, hi);
}

namespace {

// Octant of `u` inside the level-`level` cell `cell`, using scaled
// coordinates so the comparison is exact: strictly above the splitting plane
// goes to the upper octant.
int octant_of(const Vec3& u, const NodeId& cell) {
  const double scale = std::ldexp(1.0, cell.level + 1);
  int oct = 0;
  if (u.x() * scale > 2.0 * cell.ix + 1.0) oct |= 1;
  if (u.y() * scale > 2.0 * cell.iy + 1.0) oct |= 2;
  if (u.z() * scale > 2.0 * cell.iz + 1.0) oct |= 4;
  return oct;
}

Vec3 normalized_in(const Aabb& root, const Vec3& p) {
  const Vec3 u = (p - root.min_corner()) / root.edge();
  if ((u.array() < -kSceneTol).any() || (u.array() > 1.0 + kSceneTol).any()) {
    throw PointOutsideScene("point outside the root AABB");
  }
  return u.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

std::vector<NodeId> build_ideal_chain(const Aabb& root_aabb, const Vec3& point, int target_level) {
  if (target_level < 0) throw std::invalid_argument("build_ideal_chain: target_level must be >= 0");
  const Vec3 u = normalized_in(root_aabb, point);
  std::vector<NodeId> chain;
  chain.reserve(static_cast<std::size_t>(target_level) + 1);
  NodeId cur{};
  chain.push_back(cur);
  while (cur.level < target_level) {
    cur = cur.child(octant_of(u, cur));
    chain.push_back(cur);
  }
  return chain;
}

LodTree prune_tree(const Aabb& root_aabb, int grid_size, int max_depth,
                   std::span<const SparseObservation> observations) {
  if (observations.empty()) throw EmptyObservations("prune_tree: no observations");
  if (!root_aabb.is_cube()) throw std::invalid_argument("prune_tree: root AABB must be a cube");
  const double root_gsd = node_gsd(root_aabb.edge(), grid_size);
  std::set<NodeId> retained;
  for (const auto& obs : observations) {
    const int level = select_level(root_gsd, obs.radius, max_depth);
    for (const NodeId& id : build_ideal_chain(root_aabb, obs.point, level)) retained.insert(id);
  }
  const std::vector<NodeId> ids(retained.begin(), retained.end());
  return LodTree(root_aabb, grid_size, max_depth, ids);
}

LodTree build_perfect_tree(const Aabb& root_aabb, int grid_size, int depth) {
  std::vector<NodeId> ids;
  for (int l = 0; l <= depth; ++l) {
    const int n = 1 << l;
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) ids.push_back({l, x, y, z});
  }
  return LodTree(root_aabb, grid_size, depth, ids);
}

void allocate_fields(LodTree& tree, const FieldConfig& config, std::uint64_t seed) {
  for (std::size_t i = 0; i < tree.size(); ++i) tree.node(i).field.emplace(config, mix64(seed ^ mix64(i)));
}

std::uint64_t subtree_param_bytes(const LodTree& tree, const NodeId& id) {
  std::uint64_t total = 0;
  std::vector<std::size_t> stack{tree.index_of(id)};
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const OctreeNode& n = tree.node(i);
    total += n.param_bytes();
    for (const std::int32_t c : n.children) {
      if (c != kNoChild) stack.push_back(static_cast<std::size_t>(c));
    }
  }
  return total;
}

bool is_parent_closed(const LodTree& tree) {
  for (const auto& n : tree.nodes()) {
    if (n.id.level > 0 && !tree.find(n.id.parent())) return false;
  }
  return true;
}

int target_level(const LodTree& tree, double perturbed_radius, Routing routing) {
  if (routing == Routing::kLeafOnly) return tree.max_depth();
  return select_level(tree.root_gsd(), perturbed_radius, tree.max_depth());
}

std::size_t resolve_node(const LodTree& tree, const Vec3& x_world, int target, const NodeMask* available,
                         std::vector<std::size_t>* chain) {
  const Vec3 u = tree.normalized(x_world);
  const bool masked = available != nullptr && !available->empty();
  std::size_t idx = 0;
  for (;;) {
    if (chain) chain->push_back(idx);
    const OctreeNode& node = tree.node(idx);
    if (node.id.level >= target) return idx;  // Process
    const std::int32_t child = node.children[octant_of(u, node.id)];
    if (child == kNoChild || (masked && !(*available)[static_cast<std::size_t>(child)])) return idx;  // Revert
    idx = static_cast<std::size_t>(child);  // Descend
  }
}

FieldSample TreeFieldSource::query(std::size_t node, const Vec3& x_world, const Vec3& d, int appearance_id) const {
  const OctreeNode& n = tree_->node(node);
  if (!n.field) throw std::logic_error("TreeFieldSource: node " + n.id.name() + " has no resident field");
  return n.field->query(world_to_local(n.aabb, x_world), d, appearance_id);
}

}  // namespace lodnerf
