// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lodnerf/errors.hpp"
#include "lodnerf/render.hpp"
#include "lodnerf/scene_io.hpp"

namespace lodnerf {
namespace {

const Aabb kRoot(Vec3::Constant(-1.0), Vec3::Constant(1.0));

// Smooth density blob with position-dependent color.
FieldSample blob(const Vec3& x, const Vec3&) {
  FieldSample s;
  s.density = 4.0 * std::exp(-4.0 * (x - Vec3(0.1, -0.2, 0.05)).squaredNorm());
  s.color = Vec3(0.5 + 0.4 * std::sin(2 * x.x()), 0.5 + 0.3 * std::cos(3 * x.y()), 0.3 + 0.2 * x.z());
  return s;
}

AnalyticField blob_field() {
  AnalyticField f;
  f.density = [](const Vec3& x) { return blob(x, Vec3::Zero()).density; };
  f.color = [](const Vec3& x, const Vec3& d) { return blob(x, d).color; };
  f.support = {kRoot};
  return f;
}

LodTree small_tree(int depth) {
  LodTree t = build_perfect_tree(kRoot, 16, depth);
  FieldConfig cfg;
  cfg.resolution = 2;
  allocate_fields(t, cfg, 0);
  return t;
}

TEST(Composite, ZeroDensityGivesBackground) {
  const std::vector<double> sigma(4, 0.0), delta(4, 0.25);
  const std::vector<Vec3> color(4, Vec3(1, 0, 0));
  const RayRender r = composite(sigma, delta, color, Vec3(0.2, 0.3, 0.4));
  EXPECT_NEAR((r.rgb - Vec3(0.2, 0.3, 0.4)).norm(), 0.0, 1e-15);
  for (const double w : r.weights) EXPECT_EQ(w, 0.0);
  EXPECT_EQ(r.final_transmittance, 1.0);
}

TEST(Composite, OpaqueSampleGivesItsColor) {
  const std::vector<double> sigma{0.0, 1e6, 3.0}, delta{0.1, 0.1, 0.1};
  const std::vector<Vec3> color{Vec3(1, 1, 1), Vec3(0.1, 0.7, 0.3), Vec3(0, 0, 1)};
  const RayRender r = composite(sigma, delta, color, Vec3::Ones());
  EXPECT_NEAR((r.rgb - Vec3(0.1, 0.7, 0.3)).norm(), 0.0, 1e-12);
  EXPECT_THROW(composite(sigma, std::vector<double>{0.1}, color, Vec3::Ones()), LengthMismatch);
}

TEST(Composite, WeightsAreSubNormalized) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> sigma(16), delta(16, 0.05);
    for (double& s : sigma) s = u(rng);
    const RayRender r = composite(sigma, delta, std::vector<Vec3>(16, Vec3::Zero()), Vec3::Zero());
    double sum = 0.0;
    for (const double w : r.weights) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_LE(sum, 1.0 + 1e-12);
    EXPECT_NEAR(sum + r.final_transmittance, 1.0, 1e-12);
  }
}

TEST(SampleRay, StratificationProperties) {
  const CameraModel cam = CameraModel::look_at(Vec3(0, -3, 0), Vec3::Zero(), Vec3(0, 0, 1), 50.0, 32, 32);
  const Ray ray = pixel_ray(cam, Vec2(16, 16), kRoot);
  CounterRng rng(1, 2);
  const RaySampleSet one = sample_ray(ray, cam, 1, rng);
  ASSERT_EQ(one.spheres.size(), 1u);
  EXPECT_GE(one.spheres[0].depth, ray.t_near);
  EXPECT_LE(one.spheres[0].depth, ray.t_far);

  const RaySampleSet mid = sample_ray(ray, cam, 8, rng, false, false);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_NEAR(mid.spheres[k].depth, 0.5 * (mid.intervals[k].first + mid.intervals[k].second), 1e-12);
    if (k > 0) {
      EXPECT_GT(mid.spheres[k].radius, mid.spheres[k - 1].radius);
      EXPECT_DOUBLE_EQ(mid.intervals[k].first, mid.intervals[k - 1].second);
    }
    EXPECT_EQ(mid.spheres[k].perturbed_radius, mid.spheres[k].radius);
  }
  EXPECT_DOUBLE_EQ(mid.intervals.front().first, ray.t_near);
  EXPECT_DOUBLE_EQ(mid.intervals.back().second, ray.t_far);

  const RaySampleSet jit = sample_ray(ray, cam, 8, rng, true, true);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_GE(jit.spheres[k].depth, jit.intervals[k].first);
    EXPECT_LE(jit.spheres[k].depth, jit.intervals[k].second);
  }
}

TEST(SampleRay, PerturbationFlagKeepsStreamsPaired) {
  const CameraModel cam = CameraModel::look_at(Vec3(0, -3, 0), Vec3::Zero(), Vec3(0, 0, 1), 50.0, 32, 32);
  const Ray ray = pixel_ray(cam, Vec2(10, 20), kRoot);
  CounterRng a(5, 9), b(5, 9);
  const RaySampleSet on = sample_ray(ray, cam, 16, a, true, true);
  const RaySampleSet off = sample_ray(ray, cam, 16, b, true, false);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(on.spheres[k].depth, off.spheres[k].depth);
  EXPECT_EQ(a.counter(), b.counter());
}

TEST(RenderRay, MatchesOversampledQuadrature) {
  const LodTree tree = small_tree(0);
  const AnalyticFieldSource src(blob);
  const AnalyticField field = blob_field();
  RenderConfig rc;
  rc.samples_per_ray = 128;
  rc.jitter = false;
  rc.min_transmittance = 0.0;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 eye = 3.0 * Vec3(n(rng), n(rng), n(rng)).normalized();
    const CameraModel cam = CameraModel::look_at(eye, Vec3(0.2 * n(rng), 0.2 * n(rng), 0.2 * n(rng)), Vec3(0, 0, 1),
                                                 40.0, 32, 32);
    const auto ray = find_pixel_ray(cam, Vec2(16.0 + 4 * n(rng), 16.0 + 4 * n(rng)), kRoot);
    if (!ray) continue;
    CounterRng r(0, i);
    const Vec3 got = render_ray(tree, src, *ray, cam, rc, r).rgb;
    const Vec3 want = oracle_ray(field, *ray, rc.background, (ray->t_far - ray->t_near) / (64.0 * 128));
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-3);
    ++checked;
  }
  EXPECT_GT(checked, 80);
}

TEST(RenderFrame, FarViewTouchesOnlyRoot) {
  const LodTree tree = small_tree(2);
  const AnalyticFieldSource src(blob);
  // Footprint radius >= 9 / 40, above the root GSD of 1 / 8.
  const CameraModel cam = CameraModel::look_at(Vec3(0, -10, 0), Vec3::Zero(), Vec3(0, 0, 1), 20.0, 24, 24);
  RenderConfig rc;
  rc.perturb = false;
  const FrameRender f = render_frame(tree, src, cam, rc);
  ASSERT_EQ(f.report.touched_nodes.size(), 1u);
  EXPECT_EQ(f.report.touched_nodes[0], NodeId{});
  EXPECT_DOUBLE_EQ(f.report.fraction, static_cast<double>(tree.node(0).param_bytes()) / tree.total_param_bytes());
}

TEST(RenderFrame, CloseUpTouchesOneChain) {
  const LodTree tree = small_tree(3);
  const AnalyticFieldSource src(blob);
  // Inside leaf L3_3_3_7 (x, y in [-0.25, 0], z in [0.75, 1]), looking +z.
  const Vec3 eye(-0.125, -0.125, 0.76);
  const CameraModel cam = CameraModel::look_at(eye, eye + Vec3(0, 0, 1), Vec3(0, 1, 0), 400.0, 24, 24);
  RenderConfig rc;
  rc.perturb = false;
  const FrameRender f = render_frame(tree, src, cam, rc);
  ASSERT_EQ(f.report.touched_nodes.size(), 1u);
  EXPECT_EQ(f.report.touched_nodes[0], (NodeId{3, 3, 3, 7}));
  EXPECT_EQ(f.report.traversal_nodes.size(), 4u);
}

TEST(RenderFrame, DeterministicAcrossThreads) {
  const LodTree tree = small_tree(2);
  const AnalyticFieldSource src(blob);
  const CameraModel cam = CameraModel::look_at(Vec3(1.5, -2, 1), Vec3::Zero(), Vec3(0, 0, 1), 30.0, 20, 16);
  RenderConfig rc;
  rc.seed = 17;
  const FrameRender a = render_frame(tree, src, cam, rc);
  rc.threads = 3;
  const FrameRender b = render_frame(tree, src, cam, rc);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.report.touched_nodes, b.report.touched_nodes);
  EXPECT_LE(a.report.fraction, 1.0);
}

TEST(RenderTrajectory, RepeatedCameraHasZeroPopup) {
  const LodTree tree = small_tree(1);
  const AnalyticFieldSource src(blob);
  const CameraModel cam = CameraModel::look_at(Vec3(0, -3, 0), Vec3::Zero(), Vec3(0, 0, 1), 20.0, 12, 12);
  const std::vector<CameraModel> traj(4, cam);
  const TrajectoryRender r = render_trajectory(tree, src, traj, RenderConfig{});
  ASSERT_EQ(r.popup.size(), 3u);
  EXPECT_EQ(r.popup_max, 0.0);
  EXPECT_EQ(r.popup_mean, 0.0);
}

TEST(Routing, HalvingRadiusNeverCoarsens) {
  const LodTree tree = small_tree(4);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> lr(-10.0, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const double r = std::exp2(lr(rng));
    EXPECT_GE(target_level(tree, r / 2, Routing::kHierarchical), target_level(tree, r, Routing::kHierarchical));
    EXPECT_EQ(target_level(tree, r, Routing::kLeafOnly), tree.max_depth());
  }
}

}  // namespace
}  // namespace lodnerf
