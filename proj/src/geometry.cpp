// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lodnerf/errors.hpp"

namespace lodnerf {

Aabb::Aabb(const Vec3& min_corner, const Vec3& max_corner) : min_(min_corner), max_(max_corner) {
  if (!(min_.array() < max_.array()).all()) {
    throw std::invalid_argument("Aabb: min_corner must be < max_corner componentwise");
  }
}

Aabb Aabb::cube(const Vec3& center, double edge) {
  const Vec3 half = Vec3::Constant(0.5 * edge);
  return Aabb(center - half, center + half);
}

bool Aabb::is_cube(double rel_tol) const {
  const Vec3 e = extent();
  const double tol = rel_tol * e.maxCoeff();
  return std::abs(e.x() - e.y()) <= tol && std::abs(e.x() - e.z()) <= tol;
}

bool Aabb::contains(const Vec3& p, double tol) const {
  return (p.array() >= min_.array() - tol).all() && (p.array() <= max_.array() + tol).all();
}

Vec3 Aabb::corner(int i) const {
  return {(i & 1) ? max_.x() : min_.x(), (i & 2) ? max_.y() : min_.y(), (i & 4) ? max_.z() : min_.z()};
}

std::optional<std::pair<double, double>> intersect_aabb(const Vec3& origin, const Vec3& direction,
                                                        const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = origin[a];
    const double d = direction[a];
    const double lo = box.min_corner()[a];
    const double hi = box.max_corner()[a];
    if (d == 0.0) {
      if (o < lo || o > hi) return std::nullopt;
      continue;
    }
    double ta = (lo - o) / d;
    double tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

Vec3 CameraModel::center() const { return -(rotation.conjugate() * translation); }

Vec3 CameraModel::world_to_camera(const Vec3& x_world) const { return rotation * x_world + translation; }

Vec3 CameraModel::camera_to_world_dir(const Vec3& d_cam) const { return rotation.conjugate() * d_cam; }

std::optional<Vec2> CameraModel::project(const Vec3& x_world) const {
  const Vec3 p = world_to_camera(x_world);
  if (p.z() <= 0.0) return std::nullopt;
  return Vec2(focal_length * p.x() / p.z() + principal_point.x(),
              focal_length * p.y() / p.z() + principal_point.y());
}

CameraModel CameraModel::downsampled(int levels) const {
  CameraModel out = *this;
  const double s = std::ldexp(1.0, -levels);
  out.focal_length = focal_length * s;
  out.principal_point = principal_point * s;
  out.width = std::max(1, width >> levels);
  out.height = std::max(1, height >> levels);
  return out;
}

void CameraModel::validate() const {
  if (!(focal_length > 0.0)) throw std::invalid_argument("CameraModel: focal_length must be > 0");
  if (width < 1 || height < 1) throw std::invalid_argument("CameraModel: resolution must be >= 1");
  if (!(pixel_width > 0.0)) throw std::invalid_argument("CameraModel: pixel_width must be > 0");
}

CameraModel CameraModel::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_length,
                                 int width, int height, int appearance_id) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-12) right = forward.unitOrthogonal();
  right.normalize();
  const Vec3 down = forward.cross(right);
  Eigen::Matrix3d cam_from_world;
  cam_from_world.row(0) = right.transpose();
  cam_from_world.row(1) = down.transpose();
  cam_from_world.row(2) = forward.transpose();
  CameraModel cam;
  cam.rotation = Eigen::Quaterniond(cam_from_world).normalized();
  cam.translation = -(cam.rotation * eye);
  cam.focal_length = focal_length;
  cam.principal_point = Vec2(0.5 * width, 0.5 * height);
  cam.width = width;
  cam.height = height;
  cam.appearance_id = appearance_id;
  return cam;
}

double CameraModel::focal_for_fov(int width, double fov_x_rad) {
  return 0.5 * width / std::tan(0.5 * fov_x_rad);
}

std::optional<Ray> find_pixel_ray(const CameraModel& camera, const Vec2& pixel, const Aabb& scene) {
  const Vec3 d_cam((pixel.x() - camera.principal_point.x()) / camera.focal_length,
                   (pixel.y() - camera.principal_point.y()) / camera.focal_length, 1.0);
  Ray ray;
  ray.origin = camera.center();
  ray.direction = camera.camera_to_world_dir(d_cam).normalized();
  const auto hit = intersect_aabb(ray.origin, ray.direction, scene);
  if (!hit) return std::nullopt;
  ray.t_near = hit->first;
  ray.t_far = hit->second;
  return ray;
}

Ray pixel_ray(const CameraModel& camera, const Vec2& pixel, const Aabb& scene) {
  auto ray = find_pixel_ray(camera, pixel, scene);
  if (!ray) throw RayMissesScene("pixel ray does not intersect the scene box");
  return *ray;
}

Ray pixel_center_ray(const CameraModel& camera, int x, int y, const Aabb& scene) {
  return pixel_ray(camera, Vec2(x + 0.5, y + 0.5), scene);
}

double sphere_radius(double depth, const CameraModel& camera) {
  if (!(depth > 0.0)) throw NonPositiveDepth("sphere_radius: depth must be > 0");
  return depth * camera.pixel_width / (2.0 * camera.focal_length);
}

double perturb_radius(double radius, CounterRng& rng) {
  return perturb_radius_with(radius, rng.uniform() - 0.5);
}

namespace {

// Frustum planes in camera space as (normal, offset) with inside = n.p + d >= 0.
std::array<Eigen::Vector4d, 5> frustum_planes(const CameraModel& c) {
  const double f = c.focal_length;
  const double x0 = -c.principal_point.x();
  const double x1 = c.width - c.principal_point.x();
  const double y0 = -c.principal_point.y();
  const double y1 = c.height - c.principal_point.y();
  // A point (x, y, z) projects inside iff x0 <= f x / z <= x1 (and same for y), z > 0.
  return {
      Eigen::Vector4d(f, 0, -x0, 0),   // f x - x0 z >= 0
      Eigen::Vector4d(-f, 0, x1, 0),   // x1 z - f x >= 0
      Eigen::Vector4d(0, f, -y0, 0),
      Eigen::Vector4d(0, -f, y1, 0),
      Eigen::Vector4d(0, 0, 1, -1e-9),  // near plane just in front of the pinhole
  };
}

}  // namespace

bool frustum_intersects(const CameraModel& camera, const Aabb& box) {
  if (box.contains(camera.center())) return true;
  const auto planes = frustum_planes(camera);
  std::array<Vec3, 8> corners;
  for (int i = 0; i < 8; ++i) corners[i] = camera.world_to_camera(box.corner(i));
  for (const auto& pl : planes) {
    bool all_out = true;
    for (const auto& p : corners) {
      if (pl.head<3>().dot(p) + pl[3] >= 0.0) {
        all_out = false;
        break;
      }
    }
    if (all_out) return false;
  }
  return true;
}

bool frustum_contains(const CameraModel& camera, const Vec3& x_world) {
  const auto uv = camera.project(x_world);
  if (!uv) return false;
  return uv->x() >= 0.0 && uv->x() <= camera.width && uv->y() >= 0.0 && uv->y() <= camera.height;
}

}  // namespace lodnerf
