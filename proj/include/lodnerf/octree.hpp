// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lodnerf/field.hpp"
#include "lodnerf/geometry.hpp"

namespace lodnerf {

/// Cube address: level plus integer grid coordinates in [0, 2^level).
struct NodeId {
  int level = 0;
  int ix = 0;
  int iy = 0;
  int iz = 0;

  auto operator<=>(const NodeId&) const = default;

  /// "L{level}_{ix}_{iy}_{iz}", also the blob file stem.
  std::string name() const;
  static NodeId parse(const std::string& name);
  NodeId parent() const;
  NodeId child(int octant) const;
  /// Octant index of this node inside its parent (bit 0: x, bit 1: y, bit 2: z).
  int octant() const { return (ix & 1) | ((iy & 1) << 1) | ((iz & 1) << 2); }
  bool is_valid() const;
};

struct NodeIdHash {
  std::size_t operator()(const NodeId& id) const noexcept;
};

/// One sparse SfM point as seen from one camera.
struct SparseObservation {
  Vec3 point;
  int camera_index = 0;
  double radius = 0.0;
};

inline constexpr std::int32_t kNoChild = -1;

struct OctreeNode {
  NodeId id;
  Aabb aabb;
  double gsd = 0.0;
  std::int32_t parent = kNoChild;
  std::array<std::int32_t, 8> children;
  std::optional<RadianceField> field;

  std::uint64_t param_bytes() const { return field ? field->param_bytes() : 0; }
  bool has_children() const;
};

/// Retained-node availability, indexed like LodTree::nodes(). Empty = all.
using NodeMask = std::vector<char>;

/// The LoD octree. Nodes are stored sorted by NodeId, so the root is index 0
/// and every parent precedes its children.
class LodTree {
 public:
  static constexpr int kDefaultGridSize = 2048;
  static constexpr int kDefaultMaxDepth = 4;

  /// Tree made of exactly `ids`, which must contain the root and be closed
  /// under taking parents.
  LodTree(const Aabb& root_aabb, int grid_size, int max_depth, std::span<const NodeId> ids);

  const Aabb& root_aabb() const { return root_aabb_; }
  int grid_size() const { return grid_size_; }
  int max_depth() const { return max_depth_; }
  double root_gsd() const { return nodes_.front().gsd; }

  std::size_t size() const { return nodes_.size(); }
  std::span<const OctreeNode> nodes() const { return nodes_; }
  const OctreeNode& node(std::size_t i) const { return nodes_[i]; }
  OctreeNode& node(std::size_t i) { return nodes_[i]; }
  std::optional<std::size_t> find(const NodeId& id) const;
  /// Throws UnknownNode.
  std::size_t index_of(const NodeId& id) const;
  std::vector<NodeId> ids() const;

  std::uint64_t total_param_bytes() const;
  /// Deepest level actually present.
  int depth() const;
  /// Node count of the perfect tree with the same max_depth.
  std::uint64_t perfect_node_count() const;
  /// Root-normalized coordinates in [0, 1]^3; throws PointOutsideScene.
  Vec3 normalized(const Vec3& x_world) const;
  Aabb node_aabb(const NodeId& id) const;

 private:
  Aabb root_aabb_;
  int grid_size_;
  int max_depth_;
  std::vector<OctreeNode> nodes_;
  std::unordered_map<NodeId, std::size_t, NodeIdHash> index_;
};

/// GSD = AABB edge / grid size.
double node_gsd(double aabb_edge, int grid_size);

/// clamp(floor(log2(root_gsd / perturbed_radius)), 0, max_depth).
int select_level(double root_gsd, double perturbed_radius, int max_depth);

/// Node ids from the root down to `target_level` whose cubes contain `point`.
/// Points on a splitting plane go to the lower-index octant.
std::vector<NodeId> build_ideal_chain(const Aabb& root_aabb, const Vec3& point, int target_level);

/// Union of the ideal chains of every observation, each cut at the level its
/// unperturbed radius selects.
LodTree prune_tree(const Aabb& root_aabb, int grid_size, int max_depth,
                   std::span<const SparseObservation> observations);

/// Every node down to `depth`.
LodTree build_perfect_tree(const Aabb& root_aabb, int grid_size, int depth);

/// Allocates a freshly initialized field on every node; node i is seeded
/// from (seed, i).
void allocate_fields(LodTree& tree, const FieldConfig& config, std::uint64_t seed);

/// Sum of param_bytes over `id` and its descendants. Throws UnknownNode.
std::uint64_t subtree_param_bytes(const LodTree& tree, const NodeId& id);

/// Every non-root node's parent is present.
bool is_parent_closed(const LodTree& tree);

enum class Routing {
  kHierarchical,  // level from the sphere radius
  kLeafOnly,      // always the deepest retained node
};

/// Target level for a sampling sphere under `routing`.
int target_level(const LodTree& tree, double perturbed_radius, Routing routing);

/// Node-selection half of the pruned-tree forward pass: starting at the
/// root, stop at a node whose level reached `target` (Process), stop at the
/// current node when the containing child is absent or masked out (Revert),
/// otherwise move into the child (Descend). `chain`, when given, receives
/// every node index visited.
std::size_t resolve_node(const LodTree& tree, const Vec3& x_world, int target, const NodeMask* available = nullptr,
                         std::vector<std::size_t>* chain = nullptr);

struct DescendResult {
  FieldSample sample;
  std::size_t node = 0;
};

/// Forward pass of the pruned tree for one sampling sphere (x, r, d).
template <FieldSource Source>
DescendResult descend(const LodTree& tree, const Source& source, const Vec3& x, double r, const Vec3& d,
                      int appearance_id, Routing routing = Routing::kHierarchical,
                      const NodeMask* available = nullptr) {
  const std::size_t node = resolve_node(tree, x, target_level(tree, r, routing), available);
  return {source.query(node, x, d, appearance_id), node};
}

/// Field source backed by each node's own RadianceField.
class TreeFieldSource {
 public:
  explicit TreeFieldSource(const LodTree& tree) : tree_(&tree) {}
  FieldSample query(std::size_t node, const Vec3& x_world, const Vec3& d, int appearance_id) const;
  const LodTree& tree() const { return *tree_; }

 private:
  const LodTree* tree_;
};

}  // namespace lodnerf
