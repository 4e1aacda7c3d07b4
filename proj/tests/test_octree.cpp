// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "lodnerf/errors.hpp"
#include "lodnerf/octree.hpp"

namespace lodnerf {
namespace {

const Aabb kUnitRoot(Vec3::Zero(), Vec3::Ones());

// Level whose GSD is the smallest one still >= r, by direct search.
int oracle_level(double root_gsd, double r, int max_depth) {
  int l = 0;
  while (l < max_depth && root_gsd / std::exp2(l + 1) >= r) ++l;
  return l;
}

NodeId oracle_node(const Vec3& u, int level) {
  const int n = 1 << level;
  auto cell = [&](double v) { return std::min(n - 1, static_cast<int>(std::floor(v * n))); };
  return {level, cell(u.x()), cell(u.y()), cell(u.z())};
}

struct NullSource {
  FieldSample query(std::size_t, const Vec3&, const Vec3&, int) const { return {}; }
};

TEST(NodeId, NameParseRoundTrip) {
  const NodeId id{3, 5, 0, 7};
  EXPECT_EQ(id.name(), "L3_5_0_7");
  EXPECT_EQ(NodeId::parse(id.name()), id);
  EXPECT_THROW(NodeId::parse("L3_5_0"), std::invalid_argument);
  EXPECT_THROW(NodeId::parse("X1_0_0_0"), std::invalid_argument);
  EXPECT_THROW(NodeId{}.parent(), std::logic_error);
  for (int o = 0; o < 8; ++o) {
    const NodeId c = id.child(o);
    EXPECT_EQ(c.parent(), id);
    EXPECT_EQ(c.octant(), o);
  }
  EXPECT_FALSE((NodeId{1, 2, 0, 0}.is_valid()));
}

TEST(NodeGsd, Examples) {
  EXPECT_NEAR(node_gsd(1000.0, 2048), 0.48828125, 1e-12);
  EXPECT_NEAR(node_gsd(500.0, 2048), 0.244140625, 1e-12);
  EXPECT_DOUBLE_EQ(node_gsd(1.0, 1), 1.0);
}

TEST(SelectLevel, Examples) {
  EXPECT_EQ(select_level(0.48, 0.48, 4), 0);
  EXPECT_EQ(select_level(0.48, 0.12, 4), 2);
  EXPECT_EQ(select_level(0.48, 1.0, 4), 0);
  EXPECT_EQ(select_level(0.48, 1e-6, 4), 4);
  EXPECT_THROW(select_level(0.48, 0.0, 4), std::invalid_argument);
}

TEST(SelectLevel, MatchesSearchOracleAndDoubling) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-6.0, 2.0);
  for (int i = 0; i < 5000; ++i) {
    const double r = std::exp2(u(rng));
    const int l = select_level(1.0, r, 5);
    EXPECT_EQ(l, oracle_level(1.0, r, 5));
    if (l > 0 && l < 5 && r * 2 < 1.0) {
      EXPECT_EQ(select_level(1.0, 2 * r, 5), l - 1);
    }
  }
}

TEST(IdealChain, Examples) {
  const auto root_only = build_ideal_chain(kUnitRoot, Vec3(0.3, 0.3, 0.3), 0);
  ASSERT_EQ(root_only.size(), 1u);
  EXPECT_EQ(root_only[0], NodeId{});
  const auto center = build_ideal_chain(kUnitRoot, Vec3(0.5, 0.5, 0.5), 1);
  ASSERT_EQ(center.size(), 2u);
  EXPECT_EQ(center[1], (NodeId{1, 0, 0, 0}));  // ties go to the lower octant
  EXPECT_THROW(build_ideal_chain(kUnitRoot, Vec3(1.5, 0, 0), 2), PointOutsideScene);
}

TEST(IdealChain, MatchesBitOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  const Aabb root = Aabb::cube(Vec3(1, 1, 1), 4.0);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const auto chain = build_ideal_chain(root, p, 3);
    ASSERT_EQ(chain.size(), 4u);
    const Vec3 n = (p - root.min_corner()) / root.edge();
    for (int l = 0; l <= 3; ++l) EXPECT_EQ(chain[l], oracle_node(n, l));
  }
}

TEST(PruneTree, SingleObservationExamples) {
  const double root_gsd = node_gsd(1.0, 16);
  const SparseObservation a{Vec3(0.3, 0.6, 0.2), 0, root_gsd};
  EXPECT_EQ(prune_tree(kUnitRoot, 16, 4, std::span(&a, 1)).size(), 1u);
  const SparseObservation b{Vec3(0.3, 0.6, 0.2), 0, root_gsd / 5};
  const LodTree t = prune_tree(kUnitRoot, 16, 4, std::span(&b, 1));
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(t.depth(), 2);
  EXPECT_THROW(prune_tree(kUnitRoot, 16, 4, {}), EmptyObservations);
}

TEST(PruneTree, PlaneSamplesMatchCubeEnumeration) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SparseObservation> obs;
  const double r = node_gsd(1.0, 8) / 8.0 * 0.99;  // selects level 3 exactly
  std::set<NodeId> leaves;
  for (int i = 0; i < 300; ++i) {
    const Vec3 p(u(rng), u(rng), 0.4);
    obs.push_back({p, 0, r});
    leaves.insert(oracle_node(p, 3));
  }
  const LodTree t = prune_tree(kUnitRoot, 8, 3, obs);
  std::set<NodeId> got;
  for (const auto& n : t.nodes()) {
    if (n.id.level == 3) got.insert(n.id);
  }
  EXPECT_EQ(got, leaves);
  EXPECT_TRUE(is_parent_closed(t));
  EXPECT_LT(t.size(), t.perfect_node_count());
}

TEST(PruneTree, MonotoneUnderAddedObservations) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0), lr(-8.0, 0.0);
  std::vector<SparseObservation> obs;
  std::set<NodeId> prev;
  for (int step = 0; step < 20; ++step) {
    for (int i = 0; i < 10; ++i) obs.push_back({Vec3(u(rng), u(rng), u(rng)), 0, std::exp2(lr(rng))});
    const LodTree t = prune_tree(kUnitRoot, 4, 4, obs);
    const auto ids = t.ids();
    const std::set<NodeId> now(ids.begin(), ids.end());
    for (const NodeId& id : prev) EXPECT_TRUE(now.count(id)) << id.name();
    prev = now;
  }
}

TEST(PerfectTree, CountsAndSubtreeBytes) {
  // Four levels, 0 through 3.
  LodTree t = build_perfect_tree(kUnitRoot, 16, 3);
  EXPECT_EQ(t.size(), 585u);
  EXPECT_EQ(t.perfect_node_count(), 585u);
  FieldConfig cfg;
  cfg.resolution = 2;
  allocate_fields(t, cfg, 1);
  const std::uint64_t per = t.node(0).param_bytes();
  EXPECT_EQ(subtree_param_bytes(t, NodeId{}), 585 * per);
  EXPECT_EQ(subtree_param_bytes(t, NodeId{3, 3, 3, 3}), per);
  EXPECT_EQ(subtree_param_bytes(t, NodeId{1, 1, 0, 1}), 73 * per);
  EXPECT_THROW(subtree_param_bytes(t, NodeId{4, 0, 0, 0}), UnknownNode);
  EXPECT_EQ(t.total_param_bytes(), 585 * per);
}

TEST(LodTree, RejectsMissingParent) {
  const std::vector<NodeId> ids{NodeId{}, NodeId{2, 0, 0, 0}};
  EXPECT_THROW(LodTree(kUnitRoot, 4, 3, ids), std::invalid_argument);
  EXPECT_THROW(LodTree(Aabb(Vec3::Zero(), Vec3(1, 2, 1)), 4, 3, std::vector<NodeId>{NodeId{}}), std::invalid_argument);
}

// Random parent-closed tree: random chains of random length.
LodTree random_tree(std::mt19937_64& rng, int max_depth) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(0, max_depth);
  std::set<NodeId> ids;
  const int n = std::uniform_int_distribution<int>(1, 60)(rng);
  for (int i = 0; i < n; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    for (int l = 0; l <= len(rng); ++l) ids.insert(oracle_node(p, l));
  }
  ids.insert(NodeId{});
  return LodTree(kUnitRoot, 16, max_depth, std::vector<NodeId>(ids.begin(), ids.end()));
}

TEST(Descend, MatchesDeepestRetainedAncestor) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0), lr(-9.0, 1.0);
  const NullSource src;
  for (int t = 0; t < 50; ++t) {
    const LodTree tree = random_tree(rng, 4);
    for (int i = 0; i < 200; ++i) {
      const Vec3 x(u(rng), u(rng), u(rng));
      const double r = std::exp2(lr(rng));
      const int target = oracle_level(tree.root_gsd(), r, 4);
      int l = target;
      while (!tree.find(oracle_node(x, l))) --l;
      const DescendResult d = descend(tree, src, x, r, Vec3(0, 0, 1), -1);
      EXPECT_EQ(tree.node(d.node).id, oracle_node(x, l));
      EXPECT_LE(tree.node(d.node).id.level, target);
      // Leaf-only ignores the radius.
      int deepest = 4;
      while (!tree.find(oracle_node(x, deepest))) --deepest;
      EXPECT_EQ(tree.node(descend(tree, src, x, r, Vec3(0, 0, 1), -1, Routing::kLeafOnly).node).id,
                oracle_node(x, deepest));
    }
  }
}

TEST(Descend, LargeRadiusAnswersAtRoot) {
  const LodTree tree = build_perfect_tree(kUnitRoot, 16, 3);
  const NullSource src;
  EXPECT_EQ(descend(tree, src, Vec3(0.2, 0.9, 0.4), tree.root_gsd(), Vec3(0, 0, 1), -1).node, 0u);
  EXPECT_EQ(descend(tree, src, Vec3(0.2, 0.9, 0.4), 100.0, Vec3(0, 0, 1), -1).node, 0u);
}

TEST(ResolveNode, MaskedChildRevertsToParent) {
  const LodTree tree = build_perfect_tree(kUnitRoot, 16, 2);
  const Vec3 x(0.1, 0.1, 0.1);
  NodeMask mask(tree.size(), 1);
  std::vector<std::size_t> chain;
  const std::size_t full = resolve_node(tree, x, 2, &mask, &chain);
  EXPECT_EQ(tree.node(full).id, (NodeId{2, 0, 0, 0}));
  EXPECT_EQ(chain.size(), 3u);
  mask[tree.index_of(NodeId{1, 0, 0, 0})] = 0;
  EXPECT_EQ(resolve_node(tree, x, 2, &mask), 0u);
  EXPECT_THROW(resolve_node(tree, Vec3(2, 0, 0), 2), PointOutsideScene);
}

}  // namespace
}  // namespace lodnerf
