// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "lodnerf/errors.hpp"
#include "lodnerf/scene_io.hpp"

namespace lodnerf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Compact C2 bump: (1 - s^2)^3 on [0, 1), zero beyond.
double bump(double s) {
  if (s >= 1.0) return 0.0;
  const double a = 1.0 - s * s;
  return a * a * a;
}

Vec3 clamp01(const Vec3& c, double lo = 0.02, double hi = 0.98) {
  return c.cwiseMax(lo).cwiseMin(hi);
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

struct SceneBuilder {
  SyntheticScene scene;
  std::mt19937_64 rng;
  double fov = deg(60.0);
  double default_step = 2e-3;

  explicit SceneBuilder(const SyntheticSpec& spec) : rng(spec.seed) { scene.spec = spec; }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

  double focal() const { return CameraModel::focal_for_fov(scene.spec.width, fov); }

  CameraModel camera(const Vec3& eye, const Vec3& target, const Vec3& up, int appearance_id = kMeanAppearance) const {
    return CameraModel::look_at(eye, target, up, focal(), scene.spec.width, scene.spec.height, appearance_id);
  }

  // Samples points with density above `threshold` (relative to `peak`)
  // inside the support boxes and attaches every training camera that sees
  // them as a track.
  void make_cloud(double peak, double threshold) {
    const auto& boxes = scene.field.support;
    std::vector<double> volume;
    for (const auto& b : boxes) volume.push_back(b.extent().prod());
    std::discrete_distribution<std::size_t> pick(volume.begin(), volume.end());
    int feature = 0;
    int attempts = 0;
    std::uint64_t id = 1;
    while (static_cast<int>(scene.cloud.points.size()) < scene.spec.n_points && attempts < 1000 * scene.spec.n_points) {
      ++attempts;
      const Aabb& b = boxes[pick(rng)];
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = uniform(b.min_corner()[a], b.max_corner()[a]);
      if (!scene.root.contains(p) || scene.field.density(p) < threshold * peak) continue;
      SparsePoint sp;
      sp.id = id++;
      sp.xyz = p;
      for (std::size_t c = 0; c < scene.train_cameras.size(); ++c) {
        if (frustum_contains(scene.train_cameras[c], p)) sp.track.push_back({static_cast<int>(c), feature++});
      }
      if (!sp.track.empty()) scene.cloud.points.push_back(std::move(sp));
    }
  }

  void finish() {
    if (scene.spec.quadrature_step <= 0.0) scene.spec.quadrature_step = default_step;
    if (scene.spec.render_images) {
      for (const auto& cam : scene.train_cameras) scene.train_images.push_back(render_oracle(scene, cam));
    }
  }
};

void build_textured_plane(SceneBuilder& b) {
  constexpr double z0 = -0.375;
  constexpr double half = 0.06;
  constexpr double peak = 400.0;
  b.default_step = 1.5e-3;
  b.scene.field.density = [](const Vec3& x) { return peak * bump(std::abs(x.z() - z0) / half); };
  b.scene.field.color = [](const Vec3& x, const Vec3&) {
    const double coarse = std::sin(kTwoPi * x.x() / 0.7 + 0.3) * std::cos(kTwoPi * x.y() / 0.9);
    const double fine = std::sin(kTwoPi * (0.8 * x.x() + 0.6 * x.y()) / 0.07);
    const double fine2 = std::sin(kTwoPi * (-0.6 * x.x() + 0.8 * x.y()) / 0.09 + 1.0);
    return clamp01(Vec3(0.55 + 0.18 * coarse + 0.22 * fine, 0.45 - 0.15 * coarse + 0.2 * fine2,
                        0.35 + 0.12 * coarse - 0.15 * fine + 0.1 * fine2));
  };
  b.scene.field.support = {Aabb(Vec3(-1, -1, z0 - half), Vec3(1, 1, z0 + half))};

  const Vec3 up(0, 1, 0);
  for (int i = 0; i < b.scene.spec.n_cameras; ++i) {
    const double h = 0.45 * std::pow(3.0 / 0.45, b.uniform(0.0, 1.0));
    const Vec3 foot(b.uniform(-0.5, 0.5), b.uniform(-0.5, 0.5), z0);
    const Vec3 target = foot + Vec3(b.uniform(-0.15, 0.15), b.uniform(-0.15, 0.15), 0.0) * h;
    b.scene.train_cameras.push_back(b.camera(foot + Vec3(0, 0, h), target, up, i));
  }
  const int n = b.scene.spec.n_trajectory;
  const Vec3 target(0.08, -0.04, z0);
  const Vec3 dir = Vec3(0.05, -0.03, 1.0).normalized();
  for (int i = 0; i < n; ++i) {
    const double s = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    b.scene.zoom_out.push_back(b.camera(target + 0.5 * std::pow(6.0, s) * dir, target, up));
  }
  for (int i = 0; i < n; ++i) {
    const double a = kTwoPi * i / n;
    b.scene.orbit.push_back(b.camera(Vec3(1.2 * std::cos(a), 1.2 * std::sin(a), z0 + 1.5), Vec3(0, 0, z0), Vec3(0, 0, 1)));
  }
  b.make_cloud(peak, 0.5);
}

void orbit_cameras(SceneBuilder& b, double radius, double elev_lo, double elev_hi, double zoom_near,
                   double zoom_far) {
  const Vec3 up(0, 0, 1);
  for (int i = 0; i < b.scene.spec.n_cameras; ++i) {
    const double az = b.uniform(0.0, kTwoPi);
    const double el = deg(b.uniform(elev_lo, elev_hi));
    const Vec3 eye = radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    const Vec3 target(b.uniform(-0.1, 0.1), b.uniform(-0.1, 0.1), b.uniform(-0.1, 0.1));
    b.scene.train_cameras.push_back(b.camera(eye, target, up, i));
  }
  const int n = b.scene.spec.n_trajectory;
  const Vec3 dir = Vec3(0.6, -0.7, 0.35).normalized();
  for (int i = 0; i < n; ++i) {
    const double s = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    b.scene.zoom_out.push_back(b.camera(zoom_near * std::pow(zoom_far / zoom_near, s) * dir, Vec3::Zero(), up));
  }
  for (int i = 0; i < n; ++i) {
    const double a = kTwoPi * (i + 0.5) / n;
    b.scene.orbit.push_back(b.camera(Vec3(radius * std::cos(a), radius * std::sin(a), 0.6), Vec3::Zero(), up));
  }
}

void build_clusters(SceneBuilder& b) {
  struct Cluster {
    Vec3 center;
    double radius;
    Vec3 color;
  };
  constexpr double peak = 10.0;
  b.default_step = 5e-3;
  b.fov = deg(50.0);
  std::vector<Cluster> clusters;
  for (int i = 0; i < 7; ++i) {
    Cluster c;
    c.center = Vec3(b.uniform(-0.55, 0.55), b.uniform(-0.55, 0.55), b.uniform(-0.55, 0.55));
    c.radius = b.uniform(0.22, 0.35);
    c.color = Vec3(b.uniform(0.1, 0.9), b.uniform(0.1, 0.9), b.uniform(0.1, 0.9));
    clusters.push_back(c);
    b.scene.field.support.push_back(Aabb::cube(c.center, 2.0 * c.radius));
  }
  b.scene.field.density = [clusters](const Vec3& x) {
    double s = 0.0;
    for (const auto& c : clusters) s += peak * bump((x - c.center).norm() / c.radius);
    return s;
  };
  b.scene.field.color = [clusters](const Vec3& x, const Vec3&) {
    double total = 0.0;
    Vec3 acc = Vec3::Zero();
    for (const auto& c : clusters) {
      const double w = bump((x - c.center).norm() / c.radius);
      total += w;
      acc += w * c.color;
    }
    return total > 0.0 ? Vec3(acc / total) : Vec3(0.5, 0.5, 0.5);
  };
  orbit_cameras(b, 2.4, -30.0, 60.0, 1.3, 4.0);
  b.make_cloud(peak, 0.3);
}

void build_shells(SceneBuilder& b) {
  struct Shell {
    double radius, half, peak;
  };
  const std::vector<Shell> shells{{0.35, 0.05, 30.0}, {0.7, 0.04, 8.0}};
  b.default_step = 2e-3;
  b.fov = deg(50.0);
  for (const auto& s : shells) b.scene.field.support.push_back(Aabb::cube(Vec3::Zero(), 2.0 * (s.radius + s.half)));
  b.scene.field.density = [shells](const Vec3& x) {
    const double r = x.norm();
    double s = 0.0;
    for (const auto& sh : shells) s += sh.peak * bump(std::abs(r - sh.radius) / sh.half);
    return s;
  };
  b.scene.field.color = [shells](const Vec3& x, const Vec3&) {
    const double r = x.norm();
    const double lat = r > 0 ? std::asin(std::clamp(x.z() / r, -1.0, 1.0)) : 0.0;
    const double lon = std::atan2(x.y(), x.x());
    const Vec3 inner(0.85, 0.5 + 0.3 * std::sin(4.0 * lat), 0.2);
    const Vec3 outer(0.2 + 0.15 * std::cos(3.0 * lon), 0.45, 0.85);
    const double wi = bump(std::abs(r - shells[0].radius) / shells[0].half);
    const double wo = bump(std::abs(r - shells[1].radius) / shells[1].half);
    return wi + wo > 0.0 ? Vec3((wi * inner + wo * outer) / (wi + wo)) : Vec3(0.5, 0.5, 0.5);
  };
  orbit_cameras(b, 2.5, -40.0, 60.0, 1.2, 4.0);
  b.make_cloud(30.0, 0.2);
}

}  // namespace

FieldSample AnalyticField::operator()(const Vec3& x, const Vec3& d) const {
  FieldSample s;
  s.density = density(x);
  s.color = s.density > 0.0 ? color(x, d) : Vec3(0.5, 0.5, 0.5);
  return s;
}

std::vector<std::string> synthetic_scene_names() { return {"textured-plane", "colored-voxel-clusters", "nested-shells"}; }

SyntheticScene make_synthetic_scene(const SyntheticSpec& spec) {
  if (spec.width < 1 || spec.height < 1 || spec.n_cameras < 1 || spec.n_trajectory < 1 || spec.supersample < 1) {
    throw std::invalid_argument("make_synthetic_scene: sizes must be >= 1");
  }
  SceneBuilder b(spec);
  if (spec.name == "textured-plane") {
    build_textured_plane(b);
  } else if (spec.name == "colored-voxel-clusters") {
    build_clusters(b);
  } else if (spec.name == "nested-shells") {
    build_shells(b);
  } else {
    throw UnknownSceneSpec("unknown synthetic scene '" + spec.name + "'");
  }
  b.finish();
  return std::move(b.scene);
}

Vec3 oracle_ray(const AnalyticField& field, const Ray& ray, const Vec3& background, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("oracle_ray: step must be > 0");
  std::vector<std::pair<double, double>> spans;
  for (const Aabb& box : field.support) {
    const auto hit = intersect_aabb(ray.origin, ray.direction, box);
    if (!hit) continue;
    const double lo = std::max(hit->first, ray.t_near);
    const double hi = std::min(hit->second, ray.t_far);
    if (lo < hi) spans.emplace_back(lo, hi);
  }
  std::sort(spans.begin(), spans.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.first <= merged.back().second) {
      merged.back().second = std::max(merged.back().second, s.second);
    } else {
      merged.push_back(s);
    }
  }
  Vec3 rgb = Vec3::Zero();
  double transmittance = 1.0;
  for (const auto& [lo, hi] : merged) {
    const int n = std::max(1, static_cast<int>(std::ceil((hi - lo) / step)));
    const double delta = (hi - lo) / n;
    for (int k = 0; k < n; ++k) {
      const Vec3 x = ray.at(lo + (k + 0.5) * delta);
      const double sigma = field.density(x);
      if (sigma <= 0.0) continue;
      const double survive = std::exp(-sigma * delta);
      rgb += transmittance * (1.0 - survive) * field.color(x, ray.direction);
      transmittance *= survive;
    }
  }
  return rgb + transmittance * background;
}

Image render_oracle(const AnalyticField& field, const Aabb& root, const CameraModel& camera, const Vec3& background,
                    int supersample, double step) {
  camera.validate();
  if (supersample < 1) throw std::invalid_argument("render_oracle: supersample must be >= 1");
  Image out(camera.width, camera.height);
  const double inv = 1.0 / (supersample * supersample);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      Vec3 acc = Vec3::Zero();
      for (int j = 0; j < supersample; ++j) {
        for (int i = 0; i < supersample; ++i) {
          const Vec2 px(x + (i + 0.5) / supersample, y + (j + 0.5) / supersample);
          const auto ray = find_pixel_ray(camera, px, root);
          acc += ray ? oracle_ray(field, *ray, background, step) : background;
        }
      }
      out.set(x, y, acc * inv);
    }
  }
  return out;
}

Image render_oracle(const SyntheticScene& scene, const CameraModel& camera) {
  const double step = scene.spec.quadrature_step > 0.0 ? scene.spec.quadrature_step : 2e-3;
  return render_oracle(scene.field, scene.root, camera, scene.background, scene.spec.supersample, step);
}

}  // namespace lodnerf
