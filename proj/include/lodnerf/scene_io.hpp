// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lodnerf/field.hpp"
#include "lodnerf/geometry.hpp"
#include "lodnerf/image.hpp"
#include "lodnerf/octree.hpp"
#include "lodnerf/render.hpp"
#include "lodnerf/train.hpp"

namespace lodnerf {

// ---------------------------------------------------------------------------
// Sparse reconstructions

struct TrackEntry {
  int image_index = 0;  // index into the camera list
  int feature_index = 0;
  bool operator==(const TrackEntry&) const = default;
};

struct SparsePoint {
  std::uint64_t id = 0;
  Vec3 xyz = Vec3::Zero();
  std::vector<TrackEntry> track;
};

struct SparsePointCloud {
  std::vector<SparsePoint> points;
  /// Sum of track lengths.
  std::size_t observation_count() const;
};

/// A COLMAP text model. cameras[i] is the i-th image in images.txt order and
/// carries appearance_id = i.
struct ColmapModel {
  SparsePointCloud cloud;
  std::vector<CameraModel> cameras;
  std::vector<std::uint32_t> image_ids;
  std::vector<std::string> image_names;
};

/// Reads cameras.txt, images.txt and points3D.txt. Throws ParseError with the
/// offending file and line, UnsupportedCameraModel for non-pinhole models.
ColmapModel load_colmap(const std::string& dir);
void write_colmap(const std::string& dir, const ColmapModel& model);

struct ObservationSet {
  std::vector<SparseObservation> observations;
  /// Track entries whose point lies behind (or on) the camera plane.
  std::size_t skipped_behind_camera = 0;
};

/// One observation per (point, observing camera); radius from the pixel
/// footprint at the point's distance from that camera.
ObservationSet observations_from_cloud(const SparsePointCloud& cloud, std::span<const CameraModel> cameras);

/// Tight cube around the points, edge grown by `expand` (fractional).
/// Throws EmptyObservations.
Aabb scene_bounds(const SparsePointCloud& cloud, double expand = 0.05);

// ---------------------------------------------------------------------------
// Synthetic scenes

/// Closed-form radiance field plus boxes enclosing all of its density.
struct AnalyticField {
  std::function<double(const Vec3&)> density;
  std::function<Vec3(const Vec3&, const Vec3&)> color;
  std::vector<Aabb> support;

  FieldSample operator()(const Vec3& x, const Vec3& d) const;
};

struct SyntheticSpec {
  /// textured-plane, colored-voxel-clusters or nested-shells.
  std::string name = "textured-plane";
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
  int n_cameras = 32;
  /// Zoom-out / orbit frame counts.
  int n_trajectory = 12;
  int n_points = 400;
  /// Oracle anti-aliasing: k x k sub-pixel rays.
  int supersample = 3;
  /// Oracle quadrature step in world units; <= 0 picks a per-scene default.
  double quadrature_step = 0.0;
  bool render_images = true;
};

struct SyntheticScene {
  SyntheticSpec spec;
  Aabb root = Aabb(Vec3::Constant(-1.0), Vec3::Constant(1.0));
  AnalyticField field;
  Vec3 background = Vec3::Ones();
  std::vector<CameraModel> train_cameras;
  /// Oracle renders of train_cameras (empty unless spec.render_images).
  std::vector<Image> train_images;
  std::vector<CameraModel> orbit;
  /// Held-out dolly from close-up to far.
  std::vector<CameraModel> zoom_out;
  SparsePointCloud cloud;
};

/// Deterministic in spec. Throws UnknownSceneSpec.
SyntheticScene make_synthetic_scene(const SyntheticSpec& spec);
std::vector<std::string> synthetic_scene_names();

/// Dense-quadrature reference render of a single ray.
Vec3 oracle_ray(const AnalyticField& field, const Ray& ray, const Vec3& background, double step);
/// Oracle image with supersample x supersample rays per pixel.
Image render_oracle(const AnalyticField& field, const Aabb& root, const CameraModel& camera, const Vec3& background,
                    int supersample, double step);
Image render_oracle(const SyntheticScene& scene, const CameraModel& camera);

// ---------------------------------------------------------------------------
// Persistence

inline constexpr std::uint32_t kBlobMagic = 0x46444f4cu;  // "LODF"
inline constexpr std::uint16_t kBlobVersion = 1;
inline constexpr int kManifestVersion = 1;

/// Writes manifest.json plus one L{level}_{ix}_{iy}_{iz}.bin per resident
/// field into `dir` (created if needed).
void save_tree(const std::string& dir, const LodTree& tree);
/// Throws VersionMismatch, ChecksumMismatch, ParseError.
LodTree load_tree(const std::string& dir);

/// Tree plus optimizer.bin holding the Adam moments and step.
void save_checkpoint(const std::string& dir, const LodTree& tree, const AdamState& adam);
AdamState load_optimizer_state(const std::string& dir, const LodTree& tree);

/// 8-bit PNG, values clamped to [0, 1].
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);
/// Little-endian float PFM.
void write_pfm(const std::string& path, const Image& image);

/// Camera list as JSON (array of objects).
std::string cameras_to_json(std::span<const CameraModel> cameras);
std::vector<CameraModel> cameras_from_json(const std::string& text, const std::string& source = "<json>");
/// Trajectory file: a camera array, or {"type": "zoom" | "orbit", ...}.
/// Throws ParseError.
std::vector<CameraModel> load_trajectory(const std::string& path);
void save_trajectory(const std::string& path, std::span<const CameraModel> cameras);

/// Training images on disk: dataset.json with cameras and PNG file names.
void save_dataset(const std::string& dir, std::span<const CameraModel> cameras, std::span<const Image> images);
std::pair<std::vector<CameraModel>, std::vector<Image>> load_dataset(const std::string& dir);

struct WorkingSetRow {
  int frame_id = 0;
  std::uint64_t touched_node_count = 0;
  std::uint64_t touched_bytes = 0;
  std::uint64_t total_bytes = 0;
  double fraction = 0.0;
};

/// frame_id, touched_node_count, touched_bytes, total_bytes, fraction.
void write_working_set_csv(const std::string& path, std::span<const WorkingSetReport> reports);
/// Throws ParseError.
std::vector<WorkingSetRow> read_working_set_csv(const std::string& path);

}  // namespace lodnerf
