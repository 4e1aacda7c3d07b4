// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "lodnerf/geometry.hpp"

namespace lodnerf {

inline constexpr int kAppearanceDim = 32;
inline constexpr int kShBasis = 4;  // real SH up to degree 1
inline constexpr int kColorFeatures = 3 * kShBasis;
inline constexpr int kMeanAppearance = -1;

struct FieldSample {
  double density = 0.0;  // 1 / world unit
  Vec3 color = Vec3::Zero();
};

/// Upstream derivative of a scalar loss with respect to one FieldSample.
struct FieldCotangent {
  double density = 0.0;
  Vec3 color = Vec3::Zero();
};

/// Anything that can answer a field query for a resolved tree node.
template <class S>
concept FieldSource = requires(const S& s, std::size_t node, const Vec3& x, const Vec3& d, int app) {
  { s.query(node, x, d, app) } -> std::convertible_to<FieldSample>;
};

double softplus(double x);
double sigmoid(double x);
/// Degree-1 real spherical harmonics of a unit direction.
std::array<double, kShBasis> sh_basis(const Vec3& d);

/// Node-local coordinates: componentwise (x - min) / edge. Throws
/// OutOfNodeBounds when x is outside the box by more than round-off.
Vec3 world_to_local(const Aabb& box, const Vec3& x_world);
Vec3 local_to_world(const Aabb& box, const Vec3& x_local);

struct FieldConfig {
  int resolution = 32;
  int n_appearance = 0;
  double init_raw_density = -2.0;
  double init_affine_scale = 0.01;
};

class FieldGradient;

/// Dense trilinear voxel field with a degree-1 SH color head.
///
/// The parameter vector is laid out as
///   [ raw density (R^3) | color features (R^3 x 12) | appearance table (N x 32)
///     | appearance affine (3 x 32) | color bias (3) ]
/// with x varying fastest inside each grid. Vertices sit at i / (R - 1) so the
/// lattice covers the node cube exactly.
class RadianceField {
 public:
  RadianceField(int resolution, int n_appearance);
  RadianceField(const FieldConfig& config, std::uint64_t seed);

  int resolution() const { return resolution_; }
  int n_appearance() const { return n_appearance_; }
  std::size_t vertex_count() const { return static_cast<std::size_t>(resolution_) * resolution_ * resolution_; }
  std::size_t param_count() const { return params_.size(); }
  std::uint64_t param_bytes() const { return param_count() * sizeof(float); }

  std::span<float> params() { return params_; }
  std::span<const float> params() const { return params_; }

  std::size_t density_offset() const { return 0; }
  std::size_t color_offset() const { return vertex_count(); }
  std::size_t appearance_offset() const { return vertex_count() * (1 + kColorFeatures); }
  std::size_t affine_offset() const { return appearance_offset() + static_cast<std::size_t>(n_appearance_) * kAppearanceDim; }
  std::size_t bias_offset() const { return affine_offset() + 3 * kAppearanceDim; }
  /// First index of the dense head block (appearance table, affine, bias).
  std::size_t head_offset() const { return appearance_offset(); }

  std::size_t vertex_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution_ + j) * resolution_ + i;
  }
  float& raw_density(std::size_t v) { return params_[v]; }
  float raw_density(std::size_t v) const { return params_[v]; }
  std::span<float, kColorFeatures> color_features(std::size_t v) {
    return std::span<float, kColorFeatures>(params_.data() + color_offset() + v * kColorFeatures, kColorFeatures);
  }
  std::span<const float, kColorFeatures> color_features(std::size_t v) const {
    return std::span<const float, kColorFeatures>(params_.data() + color_offset() + v * kColorFeatures,
                                                  kColorFeatures);
  }

  /// Activated density and color at node-local `x_local`.
  FieldSample query(const Vec3& x_local, const Vec3& d, int appearance_id) const;

  /// Adds d(upstream . query)/d(params) into `grad`.
  void accumulate_gradient(const Vec3& x_local, const Vec3& d, int appearance_id, const FieldCotangent& upstream,
                           FieldGradient& grad) const;

  /// Activated density only; skips the color head.
  double density(const Vec3& x_local) const;
  /// Adds g_density * d(density)/d(raw density grid) into `grad`.
  void accumulate_density_gradient(const Vec3& x_local, double g_density, FieldGradient& grad) const;

  /// Sparse (index, value) form of the same gradient, sorted by index.
  std::vector<std::pair<std::size_t, double>> query_gradients(const Vec3& x_local, const Vec3& d, int appearance_id,
                                                              const FieldCotangent& upstream) const;

 private:
  struct Stencil {
    std::array<std::size_t, 8> vertex;
    std::array<double, 8> weight;
  };
  Stencil stencil(const Vec3& x_local) const;
  std::array<double, kAppearanceDim> embedding(int appearance_id) const;

  int resolution_;
  int n_appearance_;
  std::vector<float> params_;
};

/// Gradient accumulator for one RadianceField. Grid entries are tracked per
/// lattice vertex so clearing and sparse optimizer updates only visit what a
/// pass actually touched; the small head block is tracked as a whole.
class FieldGradient {
 public:
  explicit FieldGradient(const RadianceField& field);

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  int resolution() const { return resolution_; }

  void mark_vertex(std::size_t v) {
    if (!vertex_flag_[v]) {
      vertex_flag_[v] = 1;
      touched_.push_back(static_cast<std::uint32_t>(v));
    }
  }
  void mark_head() { head_touched_ = true; }
  std::span<const std::uint32_t> touched_vertices() const { return touched_; }
  bool head_touched() const { return head_touched_; }
  bool empty() const { return touched_.empty() && !head_touched_; }

  /// Zeroes the touched entries and resets tracking.
  void clear();
  /// values += other.values over other's touched entries.
  void add(const FieldGradient& other);

 private:
  void for_each_vertex_entry(std::uint32_t v, auto&& fn);

  int resolution_;
  std::size_t vertex_count_;
  std::size_t head_offset_;
  std::vector<double> values_;
  std::vector<std::uint8_t> vertex_flag_;
  std::vector<std::uint32_t> touched_;
  bool head_touched_ = false;
};

}  // namespace lodnerf
