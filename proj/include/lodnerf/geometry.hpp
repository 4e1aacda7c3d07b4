// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <optional>
#include <utility>

#include "lodnerf/rng.hpp"

namespace lodnerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Axis-aligned box in world units. Construction enforces min < max.
class Aabb {
 public:
  Aabb(const Vec3& min_corner, const Vec3& max_corner);
  static Aabb cube(const Vec3& center, double edge);

  const Vec3& min_corner() const { return min_; }
  const Vec3& max_corner() const { return max_; }
  Vec3 extent() const { return max_ - min_; }
  Vec3 center() const { return 0.5 * (min_ + max_); }
  /// Edge length along x; equals every edge for cubes.
  double edge() const { return max_.x() - min_.x(); }
  bool is_cube(double rel_tol = 1e-9) const;
  bool contains(const Vec3& p, double tol = 0.0) const;
  Vec3 corner(int i) const;

  bool operator==(const Aabb&) const = default;

 private:
  Vec3 min_;
  Vec3 max_;
};

/// Slab test. Returns the parametric [t0, t1] overlap with t0 clamped to 0,
/// or nothing when the ray misses or the box lies entirely behind the origin.
std::optional<std::pair<double, double>> intersect_aabb(const Vec3& origin, const Vec3& direction,
                                                        const Aabb& box);

/// Pinhole camera. `rotation`/`translation` map world to camera
/// (x_cam = R * x_world + t) using the OpenCV axis convention: +x right,
/// +y down, +z forward.
struct CameraModel {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();
  double focal_length = 1.0;
  Vec2 principal_point = Vec2::Zero();
  int width = 1;
  int height = 1;
  /// Pixel pitch in pixels; the world-space footprint at depth t is
  /// t * pixel_width / focal_length.
  double pixel_width = 1.0;
  /// Row of the per-image appearance table; -1 selects the mean embedding.
  int appearance_id = -1;

  Vec3 center() const;
  Vec3 world_to_camera(const Vec3& x_world) const;
  Vec3 camera_to_world_dir(const Vec3& d_cam) const;
  /// Projects into continuous pixel coordinates; nothing when behind the camera.
  std::optional<Vec2> project(const Vec3& x_world) const;
  /// Resolution divided by 2^levels; the focal length and principal point
  /// scale accordingly so the same pixel footprint grows by 2^levels.
  CameraModel downsampled(int levels) const;
  void validate() const;

  static CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_length,
                             int width, int height, int appearance_id = -1);
  /// Focal length (pixels) that gives the horizontal field of view `fov_x_rad`.
  static double focal_for_fov(int width, double fov_x_rad);
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
  double t_near = 0.0;
  double t_far = 0.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

struct SamplingSphere {
  Vec3 center;
  double depth = 0.0;
  double radius = 0.0;
  double perturbed_radius = 0.0;
  Vec3 direction;
};

/// Ray through the continuous pixel coordinate `pixel`, clipped to `scene`;
/// nothing when it does not enter the box.
std::optional<Ray> find_pixel_ray(const CameraModel& camera, const Vec2& pixel, const Aabb& scene);
/// As find_pixel_ray but throws RayMissesScene.
Ray pixel_ray(const CameraModel& camera, const Vec2& pixel, const Aabb& scene);
/// Ray through the center of integer pixel (x, y).
Ray pixel_center_ray(const CameraModel& camera, int x, int y, const Aabb& scene);

/// Sampling-sphere radius matching one pixel footprint at `depth`.
double sphere_radius(double depth, const CameraModel& camera);

/// radius * 2^p with p ~ U(-0.5, 0.5) drawn from `rng`.
double perturb_radius(double radius, CounterRng& rng);
/// Deterministic variant used when the exponent was drawn elsewhere.
inline double perturb_radius_with(double radius, double exponent) { return radius * std::exp2(exponent); }

/// Conservative frustum test against the four side planes and the near plane.
/// Never false for a visible box; may be true for near misses.
bool frustum_intersects(const CameraModel& camera, const Aabb& box);
/// Exact point-in-frustum test (in front of the camera and inside the image).
bool frustum_contains(const CameraModel& camera, const Vec3& x_world);

}  // namespace lodnerf
