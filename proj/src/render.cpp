// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/render.hpp"

#include <stdexcept>

#include "lodnerf/errors.hpp"

namespace lodnerf {

RaySampleSet sample_ray(const Ray& ray, const CameraModel& camera, int n_samples, CounterRng& rng, bool jitter,
                        bool perturb) {
  if (n_samples < 1) throw std::invalid_argument("sample_ray: n_samples must be >= 1");
  if (!(ray.t_far > ray.t_near)) throw RayMissesScene("sample_ray: empty ray interval");
  RaySampleSet out;
  out.spheres.reserve(static_cast<std::size_t>(n_samples));
  out.intervals.reserve(static_cast<std::size_t>(n_samples));
  const double h = (ray.t_far - ray.t_near) / n_samples;
  for (int k = 0; k < n_samples; ++k) {
    const double lo = ray.t_near + k * h;
    const double hi = (k + 1 == n_samples) ? ray.t_far : ray.t_near + (k + 1) * h;
    const double u = rng.uniform();
    const double p = rng.uniform() - 0.5;
    // A zero-length depth would make the footprint radius vanish.
    const double depth = std::max(lo + (jitter ? u : 0.5) * (hi - lo), 1e-12);
    SamplingSphere s;
    s.center = ray.at(depth);
    s.depth = depth;
    s.radius = sphere_radius(depth, camera);
    s.perturbed_radius = perturb ? perturb_radius_with(s.radius, p) : s.radius;
    s.direction = ray.direction;
    out.spheres.push_back(s);
    out.intervals.emplace_back(lo, hi);
  }
  return out;
}

RayRender composite(std::span<const double> sigma, std::span<const double> delta, std::span<const Vec3> color,
                    const Vec3& background) {
  if (sigma.size() != delta.size() || sigma.size() != color.size()) throw LengthMismatch("composite: sizes differ");
  RayRender out;
  out.weights.resize(sigma.size());
  out.nodes.assign(sigma.size(), kNoChild);
  double transmittance = 1.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    const double survive = std::exp(-sigma[k] * delta[k]);
    out.weights[k] = transmittance * (1.0 - survive);
    out.rgb += out.weights[k] * color[k];
    transmittance *= survive;
  }
  out.final_transmittance = transmittance;
  out.rgb += transmittance * background;
  return out;
}

WorkingSetReport make_working_set_report(const LodTree& tree, std::span<const char> answered, int frame_id) {
  if (answered.size() != tree.size()) throw LengthMismatch("make_working_set_report: mask size differs from tree");
  WorkingSetReport r;
  r.frame_id = frame_id;
  std::vector<char> traversed(tree.size(), 0);
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (!answered[i]) continue;
    r.touched_nodes.push_back(tree.node(i).id);
    r.touched_bytes += tree.node(i).param_bytes();
    for (std::int32_t a = static_cast<std::int32_t>(i); a != kNoChild; a = tree.node(static_cast<std::size_t>(a)).parent) {
      traversed[static_cast<std::size_t>(a)] = 1;
    }
  }
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (traversed[i]) r.traversal_nodes.push_back(tree.node(i).id);
  }
  r.total_bytes = tree.total_param_bytes();
  r.fraction = r.total_bytes > 0 ? static_cast<double>(r.touched_bytes) / static_cast<double>(r.total_bytes) : 0.0;
  return r;
}

void compute_popup(TrajectoryRender& render) {
  render.popup.clear();
  for (std::size_t i = 1; i < render.frames.size(); ++i) {
    render.popup.push_back(mean_abs_delta(render.frames[i - 1], render.frames[i]));
  }
  render.popup_max = 0.0;
  render.popup_mean = 0.0;
  for (const double p : render.popup) {
    render.popup_max = std::max(render.popup_max, p);
    render.popup_mean += p;
  }
  if (!render.popup.empty()) render.popup_mean /= static_cast<double>(render.popup.size());
}

}  // namespace lodnerf
