// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <span>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "lodnerf/field.hpp"
#include "lodnerf/geometry.hpp"
#include "lodnerf/image.hpp"
#include "lodnerf/octree.hpp"
#include "lodnerf/rng.hpp"

namespace lodnerf {

struct RenderConfig {
  int samples_per_ray = 32;
  bool jitter = true;
  /// Radius perturbation. When off the exponent is still drawn so that
  /// on/off renders consume identical random streams.
  bool perturb = true;
  Routing routing = Routing::kHierarchical;
  Vec3 background = Vec3::Ones();
  /// Stop marching once transmittance falls below this; 0 disables.
  double min_transmittance = 1e-4;
  std::uint64_t seed = 0;
  /// Render every stride-th pixel in x and y (preview).
  int stride = 1;
  int threads = 1;
  /// Nodes absent from this mask are treated as pruned. Null = all.
  const NodeMask* available = nullptr;
};

/// Stratified samples. Interval k is [t_near + k h, t_near + (k+1) h] with
/// h = (t_far - t_near) / n; sphere k lies inside interval k.
struct RaySampleSet {
  std::vector<SamplingSphere> spheres;
  std::vector<std::pair<double, double>> intervals;
};

/// Draws two uniforms per sample (jitter, then perturbation exponent)
/// regardless of the flags.
RaySampleSet sample_ray(const Ray& ray, const CameraModel& camera, int n_samples, CounterRng& rng, bool jitter = true,
                        bool perturb = true);

struct RayRender {
  Vec3 rgb = Vec3::Zero();
  std::vector<double> weights;
  /// Answering node per sample; kNoChild past early termination.
  std::vector<std::int32_t> nodes;
  double final_transmittance = 1.0;
};

/// Composites precomputed samples; `nodes` are not filled.
RayRender composite(std::span<const double> sigma, std::span<const double> delta, std::span<const Vec3> color,
                    const Vec3& background);

template <FieldSource Source>
RayRender render_samples(const LodTree& tree, const Source& source, const RaySampleSet& samples, int appearance_id,
                         const RenderConfig& config) {
  const std::size_t n = samples.spheres.size();
  RayRender out;
  out.weights.assign(n, 0.0);
  out.nodes.assign(n, kNoChild);
  double transmittance = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (transmittance < config.min_transmittance) break;
    const SamplingSphere& s = samples.spheres[k];
    const DescendResult hit =
        descend(tree, source, s.center, s.perturbed_radius, s.direction, appearance_id, config.routing, config.available);
    const double delta = samples.intervals[k].second - samples.intervals[k].first;
    const double survive = std::exp(-hit.sample.density * delta);
    const double w = transmittance * (1.0 - survive);
    out.weights[k] = w;
    out.nodes[k] = static_cast<std::int32_t>(hit.node);
    out.rgb += w * hit.sample.color;
    transmittance *= survive;
  }
  out.final_transmittance = transmittance;
  out.rgb += transmittance * config.background;
  return out;
}

/// Volume-renders one ray through the tree. `rng` supplies the sampling
/// stream for this ray.
template <FieldSource Source>
RayRender render_ray(const LodTree& tree, const Source& source, const Ray& ray, const CameraModel& camera,
                     const RenderConfig& config, CounterRng& rng) {
  const RaySampleSet samples = sample_ray(ray, camera, config.samples_per_ray, rng, config.jitter, config.perturb);
  return render_samples(tree, source, samples, camera.appearance_id, config);
}

/// Touched-node accounting for one frame. Only answering nodes count
/// towards touched_bytes; traversal_nodes adds their ancestors, which the
/// descent walks through without reading parameters.
struct WorkingSetReport {
  int frame_id = 0;
  std::vector<NodeId> touched_nodes;
  std::vector<NodeId> traversal_nodes;
  std::uint64_t touched_bytes = 0;
  std::uint64_t total_bytes = 0;
  double fraction = 0.0;
};

/// `answered` is indexed like tree.nodes().
WorkingSetReport make_working_set_report(const LodTree& tree, std::span<const char> answered, int frame_id);

struct FrameRender {
  Image image;
  WorkingSetReport report;
};

/// Per-pixel RNG stream for pixel (x, y): keyed on the pixel, not the frame.
inline CounterRng pixel_rng(const RenderConfig& config, const CameraModel& camera, int x, int y) {
  return CounterRng(config.seed, static_cast<std::uint64_t>(y) * static_cast<std::uint64_t>(camera.width) + x);
}

template <FieldSource Source>
FrameRender render_frame(const LodTree& tree, const Source& source, const CameraModel& camera,
                         const RenderConfig& config, int frame_id = 0) {
  camera.validate();
  const int stride = std::max(1, config.stride);
  const int w = (camera.width + stride - 1) / stride;
  const int h = (camera.height + stride - 1) / stride;
  Image image(w, h);
  const int n_threads = std::clamp(config.threads, 1, h);
  std::vector<std::vector<char>> answered(static_cast<std::size_t>(n_threads), std::vector<char>(tree.size(), 0));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_threads));

  auto work = [&](int t) {
    try {
      auto& mine = answered[static_cast<std::size_t>(t)];
      for (int y = t; y < h; y += n_threads) {
        for (int x = 0; x < w; ++x) {
          const int px = x * stride;
          const int py = y * stride;
          const auto ray = find_pixel_ray(camera, Vec2(px + 0.5, py + 0.5), tree.root_aabb());
          if (!ray) {
            image.set(x, y, config.background);
            continue;
          }
          CounterRng rng = pixel_rng(config, camera, px, py);
          const RayRender r = render_ray(tree, source, *ray, camera, config, rng);
          image.set(x, y, r.rgb);
          for (const std::int32_t node : r.nodes) {
            if (node != kNoChild) mine[static_cast<std::size_t>(node)] = 1;
          }
        }
      }
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  };

  if (n_threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (int t = 1; t < n_threads; ++t) {
    for (std::size_t i = 0; i < tree.size(); ++i) answered[0][i] |= answered[static_cast<std::size_t>(t)][i];
  }
  return {std::move(image), make_working_set_report(tree, answered[0], frame_id)};
}

struct TrajectoryRender {
  std::vector<Image> frames;
  std::vector<WorkingSetReport> reports;
  /// mean |delta rgb| between frames i and i+1.
  std::vector<double> popup;
  double popup_max = 0.0;
  double popup_mean = 0.0;
};

/// Popup statistics over consecutive frame pairs.
void compute_popup(TrajectoryRender& render);

template <FieldSource Source>
TrajectoryRender render_trajectory(const LodTree& tree, const Source& source, std::span<const CameraModel> trajectory,
                                   const RenderConfig& config) {
  if (trajectory.empty()) throw std::invalid_argument("render_trajectory: empty trajectory");
  TrajectoryRender out;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    FrameRender f = render_frame(tree, source, trajectory[i], config, static_cast<int>(i));
    out.frames.push_back(std::move(f.image));
    out.reports.push_back(std::move(f.report));
  }
  compute_popup(out);
  return out;
}

/// Field source evaluating a closed-form field at world coordinates; the
/// resolved node is ignored. Used for oracles and working-set experiments.
class AnalyticFieldSource {
 public:
  using Fn = std::function<FieldSample(const Vec3& x_world, const Vec3& d)>;
  explicit AnalyticFieldSource(Fn fn) : fn_(std::move(fn)) {}
  FieldSample query(std::size_t /*node*/, const Vec3& x_world, const Vec3& d, int /*appearance_id*/) const {
    return fn_(x_world, d);
  }

 private:
  Fn fn_;
};

}  // namespace lodnerf
