// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/field.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "lodnerf/errors.hpp"

namespace lodnerf {

namespace {
constexpr double kSh0 = 0.28209479177387814;
constexpr double kSh1 = 0.4886025119029199;
constexpr double kLocalTol = 1e-9;
}  // namespace

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::array<double, kShBasis> sh_basis(const Vec3& d) {
  return {kSh0, -kSh1 * d.y(), kSh1 * d.z(), -kSh1 * d.x()};
}

Vec3 world_to_local(const Aabb& box, const Vec3& x_world) {
  const Vec3 local = ((x_world - box.min_corner()).array() / box.extent().array()).matrix();
  if ((local.array() < -kLocalTol).any() || (local.array() > 1.0 + kLocalTol).any()) {
    throw OutOfNodeBounds("world_to_local: point outside node box");
  }
  return local.cwiseMax(0.0).cwiseMin(1.0);
}

Vec3 local_to_world(const Aabb& box, const Vec3& x_local) {
  return box.min_corner() + (x_local.array() * box.extent().array()).matrix();
}

RadianceField::RadianceField(int resolution, int n_appearance)
    : resolution_(resolution), n_appearance_(n_appearance) {
  if (resolution < 2) throw std::invalid_argument("RadianceField: resolution must be >= 2");
  if (n_appearance < 0) throw std::invalid_argument("RadianceField: n_appearance must be >= 0");
  params_.assign(bias_offset() + 3, 0.0f);
}

RadianceField::RadianceField(const FieldConfig& config, std::uint64_t seed)
    : RadianceField(config.resolution, config.n_appearance) {
  std::fill_n(params_.begin(), vertex_count(), static_cast<float>(config.init_raw_density));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_affine_scale);
  for (std::size_t i = affine_offset(); i < bias_offset(); ++i) params_[i] = static_cast<float>(normal(rng));
}

RadianceField::Stencil RadianceField::stencil(const Vec3& x_local) const {
  if ((x_local.array() < -kLocalTol).any() || (x_local.array() > 1.0 + kLocalTol).any()) {
    throw OutOfNodeBounds("RadianceField: query outside the unit cube");
  }
  const int last = resolution_ - 1;
  std::array<int, 3> base;
  std::array<double, 3> frac;
  for (int a = 0; a < 3; ++a) {
    const double p = std::clamp(x_local[a], 0.0, 1.0) * last;
    const int i0 = std::min(static_cast<int>(std::floor(p)), last - 1);
    base[a] = i0;
    frac[a] = p - i0;
  }
  Stencil s;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    s.vertex[c] = vertex_index(base[0] + dx, base[1] + dy, base[2] + dz);
    s.weight[c] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) * (dz ? frac[2] : 1.0 - frac[2]);
  }
  return s;
}

std::array<double, kAppearanceDim> RadianceField::embedding(int appearance_id) const {
  std::array<double, kAppearanceDim> e{};
  if (n_appearance_ == 0) return e;
  const float* table = params_.data() + appearance_offset();
  if (appearance_id == kMeanAppearance) {
    for (int r = 0; r < n_appearance_; ++r) {
      for (int j = 0; j < kAppearanceDim; ++j) e[j] += table[r * kAppearanceDim + j];
    }
    for (auto& v : e) v /= n_appearance_;
    return e;
  }
  if (appearance_id < 0 || appearance_id >= n_appearance_) {
    throw std::out_of_range("RadianceField: appearance id out of range");
  }
  for (int j = 0; j < kAppearanceDim; ++j) e[j] = table[appearance_id * kAppearanceDim + j];
  return e;
}

FieldSample RadianceField::query(const Vec3& x_local, const Vec3& d, int appearance_id) const {
  const Stencil s = stencil(x_local);
  double raw_density = 0.0;
  std::array<double, kColorFeatures> feat{};
  const float* dens = params_.data();
  const float* col = params_.data() + color_offset();
  for (int c = 0; c < 8; ++c) {
    const double w = s.weight[c];
    const std::size_t v = s.vertex[c];
    raw_density += w * dens[v];
    const float* f = col + v * kColorFeatures;
    for (int k = 0; k < kColorFeatures; ++k) feat[k] += w * f[k];
  }
  const auto sh = sh_basis(d);
  const auto e = embedding(appearance_id);
  const float* affine = params_.data() + affine_offset();
  const float* bias = params_.data() + bias_offset();
  FieldSample out;
  out.density = softplus(raw_density);
  for (int ch = 0; ch < 3; ++ch) {
    double raw = bias[ch];
    for (int k = 0; k < kShBasis; ++k) raw += feat[ch * kShBasis + k] * sh[k];
    if (n_appearance_ > 0) {
      for (int j = 0; j < kAppearanceDim; ++j) raw += affine[ch * kAppearanceDim + j] * e[j];
    }
    out.color[ch] = sigmoid(raw);
  }
  return out;
}

void RadianceField::accumulate_gradient(const Vec3& x_local, const Vec3& d, int appearance_id,
                                        const FieldCotangent& upstream, FieldGradient& grad) const {
  const Stencil s = stencil(x_local);
  double raw_density = 0.0;
  std::array<double, kColorFeatures> feat{};
  const float* dens = params_.data();
  const float* col = params_.data() + color_offset();
  for (int c = 0; c < 8; ++c) {
    const double w = s.weight[c];
    const std::size_t v = s.vertex[c];
    raw_density += w * dens[v];
    const float* f = col + v * kColorFeatures;
    for (int k = 0; k < kColorFeatures; ++k) feat[k] += w * f[k];
  }
  const auto sh = sh_basis(d);
  const auto e = embedding(appearance_id);
  const float* affine = params_.data() + affine_offset();
  const float* bias = params_.data() + bias_offset();

  const double g_raw_density = upstream.density * sigmoid(raw_density);
  std::array<double, 3> g_raw_color{};
  for (int ch = 0; ch < 3; ++ch) {
    double raw = bias[ch];
    for (int k = 0; k < kShBasis; ++k) raw += feat[ch * kShBasis + k] * sh[k];
    if (n_appearance_ > 0) {
      for (int j = 0; j < kAppearanceDim; ++j) raw += affine[ch * kAppearanceDim + j] * e[j];
    }
    const double sg = sigmoid(raw);
    g_raw_color[ch] = upstream.color[ch] * sg * (1.0 - sg);
  }

  std::span<double> g = grad.values();
  double* g_col = g.data() + color_offset();
  for (int c = 0; c < 8; ++c) {
    const double w = s.weight[c];
    const std::size_t v = s.vertex[c];
    grad.mark_vertex(v);
    g[v] += w * g_raw_density;
    double* gf = g_col + v * kColorFeatures;
    for (int ch = 0; ch < 3; ++ch) {
      const double wc = w * g_raw_color[ch];
      for (int k = 0; k < kShBasis; ++k) gf[ch * kShBasis + k] += wc * sh[k];
    }
  }

  grad.mark_head();
  double* g_affine = g.data() + affine_offset();
  double* g_bias = g.data() + bias_offset();
  for (int ch = 0; ch < 3; ++ch) g_bias[ch] += g_raw_color[ch];
  if (n_appearance_ == 0) return;
  std::array<double, kAppearanceDim> g_e{};
  for (int ch = 0; ch < 3; ++ch) {
    for (int j = 0; j < kAppearanceDim; ++j) {
      g_affine[ch * kAppearanceDim + j] += g_raw_color[ch] * e[j];
      g_e[j] += g_raw_color[ch] * affine[ch * kAppearanceDim + j];
    }
  }
  double* g_table = g.data() + appearance_offset();
  if (appearance_id == kMeanAppearance) {
    const double inv = 1.0 / n_appearance_;
    for (int r = 0; r < n_appearance_; ++r) {
      for (int j = 0; j < kAppearanceDim; ++j) g_table[r * kAppearanceDim + j] += inv * g_e[j];
    }
  } else {
    for (int j = 0; j < kAppearanceDim; ++j) g_table[appearance_id * kAppearanceDim + j] += g_e[j];
  }
}

double RadianceField::density(const Vec3& x_local) const {
  const Stencil s = stencil(x_local);
  double raw = 0.0;
  for (int c = 0; c < 8; ++c) raw += s.weight[c] * params_[s.vertex[c]];
  return softplus(raw);
}

void RadianceField::accumulate_density_gradient(const Vec3& x_local, double g_density, FieldGradient& grad) const {
  const Stencil s = stencil(x_local);
  double raw = 0.0;
  for (int c = 0; c < 8; ++c) raw += s.weight[c] * params_[s.vertex[c]];
  const double g_raw = g_density * sigmoid(raw);
  std::span<double> g = grad.values();
  for (int c = 0; c < 8; ++c) {
    grad.mark_vertex(s.vertex[c]);
    g[s.vertex[c]] += s.weight[c] * g_raw;
  }
}

std::vector<std::pair<std::size_t, double>> RadianceField::query_gradients(const Vec3& x_local, const Vec3& d,
                                                                           int appearance_id,
                                                                           const FieldCotangent& upstream) const {
  FieldGradient grad(*this);
  accumulate_gradient(x_local, d, appearance_id, upstream, grad);
  std::map<std::size_t, double> entries;
  const auto values = grad.values();
  for (const std::uint32_t v : grad.touched_vertices()) {
    if (values[v] != 0.0) entries[v] = values[v];
    for (int k = 0; k < kColorFeatures; ++k) {
      const std::size_t idx = color_offset() + v * kColorFeatures + k;
      if (values[idx] != 0.0) entries[idx] = values[idx];
    }
  }
  for (std::size_t i = head_offset(); i < param_count(); ++i) {
    if (values[i] != 0.0) entries[i] = values[i];
  }
  return {entries.begin(), entries.end()};
}

FieldGradient::FieldGradient(const RadianceField& field)
    : resolution_(field.resolution()),
      vertex_count_(field.vertex_count()),
      head_offset_(field.head_offset()),
      values_(field.param_count(), 0.0),
      vertex_flag_(field.vertex_count(), 0) {}

void FieldGradient::for_each_vertex_entry(std::uint32_t v, auto&& fn) {
  fn(static_cast<std::size_t>(v));
  const std::size_t base = vertex_count_ + static_cast<std::size_t>(v) * kColorFeatures;
  for (int k = 0; k < kColorFeatures; ++k) fn(base + k);
}

void FieldGradient::clear() {
  for (const std::uint32_t v : touched_) {
    for_each_vertex_entry(v, [&](std::size_t i) { values_[i] = 0.0; });
    vertex_flag_[v] = 0;
  }
  touched_.clear();
  if (head_touched_) {
    std::fill(values_.begin() + static_cast<std::ptrdiff_t>(head_offset_), values_.end(), 0.0);
    head_touched_ = false;
  }
}

void FieldGradient::add(const FieldGradient& other) {
  if (other.values_.size() != values_.size()) throw std::invalid_argument("FieldGradient::add: size mismatch");
  for (const std::uint32_t v : other.touched_) {
    mark_vertex(v);
    for_each_vertex_entry(v, [&](std::size_t i) { values_[i] += other.values_[i]; });
  }
  if (other.head_touched_) {
    mark_head();
    for (std::size_t i = head_offset_; i < values_.size(); ++i) values_[i] += other.values_[i];
  }
}

}  // namespace lodnerf
