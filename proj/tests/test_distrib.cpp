// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lodnerf/distrib.hpp"
#include "lodnerf/errors.hpp"

namespace lodnerf {
namespace {

const Aabb kRoot(Vec3::Constant(-1.0), Vec3::Constant(1.0));

void allocate(LodTree& t, std::uint64_t seed) {
  FieldConfig cfg;
  cfg.resolution = 3;
  cfg.n_appearance = 2;
  allocate_fields(t, cfg, seed);
}

std::vector<CameraModel> ring_cameras(int n, int size) {
  std::vector<CameraModel> cams;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * 3.141592653589793 * (i + 0.25) / n;
    CameraModel c =
        CameraModel::look_at(Vec3(3 * std::cos(a), 3 * std::sin(a), 0.8), Vec3::Zero(), Vec3(0, 0, 1), size, size, size);
    c.appearance_id = i % 2;
    cams.push_back(c);
  }
  return cams;
}

std::vector<SparseObservation> random_observations(int n, std::uint64_t seed, double x_max = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.9, 0.9), ux(-0.9, x_max);
  std::vector<SparseObservation> obs;
  for (int i = 0; i < n; ++i) obs.push_back({Vec3(ux(rng), u(rng), u(rng)), 0, 0.01});
  return obs;
}

PyramidDataset dataset_for(const std::vector<CameraModel>& cams, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Image> images;
  for (const CameraModel& c : cams) {
    Image img(c.width, c.height);
    for (int y = 0; y < c.height; ++y) {
      for (int x = 0; x < c.width; ++x) img.set(x, y, Vec3(u(rng), u(rng), u(rng)));
    }
    images.push_back(std::move(img));
  }
  return build_pyramid(images, cams, 2, 8);
}

TrainConfig small_config(int iterations) {
  TrainConfig cfg;
  cfg.n_iterations = iterations;
  cfg.rays_per_batch = 24;
  cfg.samples_per_ray = 8;
  cfg.transparency_samples_per_step = 16;
  cfg.reg_samples_per_step = 16;
  cfg.seed = 5;
  return cfg;
}

void expect_same_params(const LodTree& a, const LodTree& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto pa = a.node(i).field->params(), pb = b.node(i).field->params();
    EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin())) << a.node(i).id.name();
  }
}

TEST(Plan, RootOnlySharedFractionOfPerfectTree) {
  LodTree t = build_perfect_tree(kRoot, 16, 3);
  allocate(t, 1);
  const auto cams = ring_cameras(2, 16);
  const auto obs = random_observations(50, 2);
  const DistributionPlan p = plan(t, 1, 4, obs, cams, 2);
  EXPECT_EQ(p.shared_node_ids, std::vector<NodeId>{NodeId{}});
  EXPECT_NEAR(static_cast<double>(p.shared_bytes(t)) / t.total_param_bytes(), 1.0 / 585.0, 1e-15);
  for (int w = 0; w < 4; ++w) {
    EXPECT_EQ(p.assignments[w].size(), 2u);
    EXPECT_EQ(p.worker_bytes(t, w), p.shared_bytes(t) + 2 * subtree_param_bytes(t, NodeId{1, 0, 0, 0}));
  }
}

TEST(Plan, SingleWorkerGetsFullImages) {
  LodTree t = build_perfect_tree(kRoot, 16, 2);
  allocate(t, 1);
  const auto cams = ring_cameras(3, 20);
  const DistributionPlan p = plan(t, 1, 1, random_observations(10, 3), cams, 0);
  for (const PixelRect& r : p.rects[0]) EXPECT_EQ(r, (PixelRect{0, 0, 20, 20}));
  EXPECT_EQ(p.owned_nodes(t, 0).size() + p.shared_nodes(t).size(), t.size());
}

TEST(Plan, GreedyLoadWithinLargestSubtreeOfMean) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<SparseObservation> obs = random_observations(40, 100 + trial);
    std::uniform_real_distribution<double> lr(-7.0, -1.0);
    for (auto& o : obs) o.radius = std::exp2(lr(rng));
    LodTree t = prune_tree(kRoot, 16, 4, obs);
    allocate(t, 1);
    if (t.depth() < 1) continue;
    const int k = 2 + trial % 3;
    const DistributionPlan p = plan(t, 1, k, obs, ring_cameras(2, 16), 2);
    std::uint64_t largest = 0, sum = 0, max_load = 0;
    std::vector<bool> seen(t.size(), false);
    for (int w = 0; w < k; ++w) {
      std::uint64_t load = 0;
      for (const NodeId& id : p.assignments[w]) {
        const std::uint64_t b = subtree_param_bytes(t, id);
        largest = std::max(largest, b);
        load += b;
      }
      for (const std::size_t i : p.owned_nodes(t, w)) {
        EXPECT_FALSE(seen[i]);
        seen[i] = true;
      }
      sum += load;
      max_load = std::max(max_load, load);
    }
    EXPECT_LE(max_load, sum / k + largest);
    for (const std::size_t i : p.shared_nodes(t)) {
      EXPECT_FALSE(seen[i]);
      seen[i] = true;
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  }
}

TEST(Plan, RectsContainProjectedSubtreePoints) {
  LodTree t = build_perfect_tree(kRoot, 16, 2);
  allocate(t, 1);
  const auto cams = ring_cameras(4, 40);
  const auto obs = random_observations(200, 5);
  const DistributionPlan p = plan(t, 1, 3, obs, cams, 1);
  for (int w = 0; w < 3; ++w) {
    for (const SparseObservation& o : obs) {
      const bool mine = std::any_of(p.assignments[w].begin(), p.assignments[w].end(),
                                    [&](const NodeId& id) { return t.node_aabb(id).contains(o.point); });
      if (!mine) continue;
      for (std::size_t c = 0; c < cams.size(); ++c) {
        const auto uv = cams[c].project(o.point);
        if (!uv || uv->x() < 0 || uv->y() < 0 || uv->x() >= 40 || uv->y() >= 40) continue;
        EXPECT_TRUE(p.rects[w][c].contains(static_cast<int>(uv->x()), static_cast<int>(uv->y())));
      }
    }
  }
}

TEST(Plan, UnobservedWorkerHasEmptyMask) {
  // Subtrees alternate between two workers along z, so points with z < 0
  // leave worker 1 without pixels.
  LodTree t = build_perfect_tree(kRoot, 16, 1);
  allocate(t, 1);
  const auto cams = ring_cameras(2, 24);
  std::vector<SparseObservation> obs = random_observations(50, 6);
  for (auto& o : obs) o.point.z() = -std::abs(o.point.z()) - 0.05;
  const DistributionPlan p = plan(t, 1, 2, obs, cams, 1);
  for (const NodeId& id : p.assignments[1]) EXPECT_EQ(id.iz, 1);
  for (const PixelRect& r : p.rects[1]) EXPECT_TRUE(r.empty());
  const PyramidDataset ds = dataset_for(cams, 7);
  std::mt19937_64 rng(1);
  EXPECT_THROW(masked_sample_pixels(ds, p, 1, 4, rng), EmptyMask);
  for (const PixelSample& s : masked_sample_pixels(ds, p, 0, 200, rng)) {
    EXPECT_TRUE(p.rects[0][s.image].at_level(s.level, ds.image(s.level, s.image).width(),
                                             ds.image(s.level, s.image).height())
                    .contains(s.x, s.y));
  }
}

TEST(Plan, Validation) {
  LodTree t = build_perfect_tree(kRoot, 16, 2);
  const std::vector<NodeId> root_only{NodeId{}};
  const LodTree single(kRoot, 16, 2, root_only);
  const auto cams = ring_cameras(2, 16);
  const auto obs = random_observations(5, 8);
  EXPECT_THROW(plan(single, 1, 2, obs, cams), NoSubtreesAtLevel);
  EXPECT_THROW(plan(t, 0, 2, obs, cams), std::invalid_argument);
  EXPECT_THROW(plan(t, 1, 0, obs, cams), std::invalid_argument);
}

TEST(PixelRect, AtLevelCoversFootprint) {
  const PixelRect r{3, 5, 17, 9};
  EXPECT_EQ(r.at_level(0, 64, 64), r);
  EXPECT_EQ(r.at_level(1, 32, 32), (PixelRect{1, 2, 9, 5}));
  EXPECT_EQ(r.at_level(2, 3, 16), (PixelRect{0, 1, 3, 3}));
}

TEST(PlanJson, RoundTrip) {
  LodTree t = build_perfect_tree(kRoot, 16, 2);
  allocate(t, 1);
  const DistributionPlan p = plan(t, 1, 3, random_observations(100, 9), ring_cameras(3, 32), 4);
  const DistributionPlan q = plan_from_json(plan_to_json(p));
  EXPECT_EQ(q.split_level, p.split_level);
  EXPECT_EQ(q.n_workers, p.n_workers);
  EXPECT_EQ(q.margin, p.margin);
  EXPECT_EQ(q.shared_node_ids, p.shared_node_ids);
  EXPECT_EQ(q.assignments, p.assignments);
  EXPECT_EQ(q.rects, p.rects);
  EXPECT_THROW(plan_from_json("{\"split_level\": 1}"), ParseError);
  EXPECT_THROW(plan_from_json("not json"), ParseError);
}

TEST(Simulation, SingleWorkerMatchesFitBitwise) {
  LodTree a = build_perfect_tree(kRoot, 16, 2);
  allocate(a, 10);
  LodTree b = a;
  const auto cams = ring_cameras(4, 16);
  const PyramidDataset ds = dataset_for(cams, 11);
  const TrainConfig cfg = small_config(5);
  const DistributionPlan p = plan(a, 1, 1, random_observations(50, 12), cams, 0);
  const DistributedReport r = simulate_distributed_fit(a, ds, p, cfg);
  fit(b, ds, cfg, FitOptions{0, "", "", false});
  expect_same_params(a, b);
  ASSERT_EQ(r.rows.size(), 5u);
  EXPECT_EQ(r.rows[0].comm_bytes, r.shared_param_count * 4);
}

TEST(Simulation, MatchesSingleTreeReference) {
  LodTree a = build_perfect_tree(kRoot, 16, 2);
  allocate(a, 13);
  LodTree b = a;
  const auto cams = ring_cameras(4, 32);
  const PyramidDataset ds = dataset_for(cams, 14);
  const TrainConfig cfg = small_config(6);
  const DistributionPlan p = plan(a, 1, 3, random_observations(300, 15), cams, 2);
  const DistributedReport r = simulate_distributed_fit(a, ds, p, cfg);
  reference_distributed_fit(b, ds, p, cfg);
  expect_same_params(a, b);
  ASSERT_EQ(r.worker_bytes.size(), 3u);
  for (int w = 0; w < 3; ++w) {
    EXPECT_EQ(r.worker_bytes[w], p.worker_bytes(a, w));
    EXPECT_LT(r.worker_bytes[w], r.total_bytes);
  }
  EXPECT_EQ(r.rows.back().worker_loss.size(), 3u);
  EXPECT_EQ(r.rows.back().comm_bytes, r.shared_param_count * 3 * 4);
}

}  // namespace
}  // namespace lodnerf
