// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lodnerf/errors.hpp"
#include "lodnerf/scene_io.hpp"

namespace lodnerf {

namespace {
constexpr std::uint64_t kTransparencySalt = 0x5452414e53504152ULL;
constexpr std::uint64_t kRegSalt = 0x4c4556454c524547ULL;
constexpr std::uint64_t kMaxConsecutiveRejections = 2'000'000;

const RadianceField& resident_field(const LodTree& tree, std::size_t node) {
  const auto& f = tree.node(node).field;
  if (!f) throw std::logic_error("node " + tree.node(node).id.name() + " has no resident field");
  return *f;
}

Vec3 uniform_point(const Aabb& box, CounterRng& rng) {
  const double ux = rng.uniform();
  const double uy = rng.uniform();
  const double uz = rng.uniform();
  return box.min_corner() + (Vec3(ux, uy, uz).array() * box.extent().array()).matrix();
}
}  // namespace

void TrainConfig::validate() const {
  if (w1 < 0 || w2 < 0 || w3 < 0) throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
  if (pyramid_levels < 1) throw std::invalid_argument("TrainConfig: pyramid_levels must be >= 1");
  if (n_iterations < 0) throw std::invalid_argument("TrainConfig: n_iterations must be >= 0");
  if (rays_per_batch < 1 || samples_per_ray < 1) throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
  if (transparency_samples_per_step < 0 || reg_samples_per_step < 0) {
    throw std::invalid_argument("TrainConfig: point counts must be >= 0");
  }
}

PyramidDataset::PyramidDataset(std::vector<std::vector<Image>> images, std::vector<std::vector<CameraModel>> cameras,
                               int holdout_every)
    : images_(std::move(images)), cameras_(std::move(cameras)), holdout_every_(holdout_every) {
  if (images_.empty() || images_.front().empty()) throw std::invalid_argument("PyramidDataset: no images");
  if (images_.size() != cameras_.size()) throw LengthMismatch("PyramidDataset: level counts differ");
  if (holdout_every < 0) throw std::invalid_argument("PyramidDataset: holdout_every must be >= 0");
  offsets_.push_back(0);
  for (std::size_t l = 0; l < images_.size(); ++l) {
    if (images_[l].size() != images_.front().size() || cameras_[l].size() != images_[l].size()) {
      throw LengthMismatch("PyramidDataset: image/camera counts differ");
    }
    for (std::size_t i = 0; i < images_[l].size(); ++i) {
      const Image& img = images_[l][i];
      if (img.width() != cameras_[l][i].width || img.height() != cameras_[l][i].height) {
        throw LengthMismatch("PyramidDataset: image size differs from its camera");
      }
      offsets_.push_back(offsets_.back() + img.pixel_count());
    }
  }
}

std::uint64_t PyramidDataset::level_pixel_count(int level) const {
  const std::size_t n = images_.front().size();
  return offsets_[(level + 1) * n] - offsets_[level * n];
}

PixelSample PyramidDataset::locate(std::uint64_t flat_index) const {
  if (flat_index >= pixel_count()) throw std::out_of_range("PyramidDataset::locate: index out of range");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat_index);
  const std::size_t slot = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  const std::size_t n = images_.front().size();
  PixelSample p;
  p.level = static_cast<int>(slot / n);
  p.image = static_cast<int>(slot % n);
  const std::uint64_t local = flat_index - offsets_[slot];
  const int w = images_[p.level][p.image].width();
  p.x = static_cast<int>(local % w);
  p.y = static_cast<int>(local / w);
  return p;
}

bool PyramidDataset::is_held_out(const PixelSample& p) const {
  if (holdout_every_ <= 0) return false;
  const std::uint64_t idx = static_cast<std::uint64_t>(p.y) * images_[p.level][p.image].width() + p.x;
  return idx % holdout_every_ == static_cast<std::uint64_t>(holdout_every_ - 1);
}

PyramidDataset build_pyramid(std::span<const Image> images, std::span<const CameraModel> cameras, int levels,
                             int holdout_every) {
  if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
  if (images.size() != cameras.size()) throw LengthMismatch("build_pyramid: image and camera counts differ");
  if (images.empty()) throw std::invalid_argument("build_pyramid: no images");
  const int min_side = 1 << (levels - 1);
  for (const Image& img : images) {
    if (img.width() < min_side || img.height() < min_side) {
      throw ImageTooSmall("build_pyramid: image smaller than 2^(levels-1) pixels per side");
    }
  }
  std::vector<std::vector<Image>> imgs(static_cast<std::size_t>(levels));
  std::vector<std::vector<CameraModel>> cams(static_cast<std::size_t>(levels));
  for (std::size_t i = 0; i < images.size(); ++i) {
    imgs[0].push_back(images[i]);
    cams[0].push_back(cameras[i]);
    for (int l = 1; l < levels; ++l) {
      imgs[l].push_back(box_downsample(imgs[l - 1].back()));
      cams[l].push_back(cameras[i].downsampled(l));
    }
  }
  return PyramidDataset(std::move(imgs), std::move(cams), holdout_every);
}

std::vector<PixelSample> sample_pixels_where(const PyramidDataset& dataset, int n, std::mt19937_64& rng,
                                             const std::function<bool(const PixelSample&)>& accept) {
  if (n < 1) throw std::invalid_argument("sample_pixels: n must be >= 1");
  std::uniform_int_distribution<std::uint64_t> dist(0, dataset.pixel_count() - 1);
  std::vector<PixelSample> out;
  out.reserve(static_cast<std::size_t>(n));
  std::uint64_t rejected = 0;
  while (out.size() < static_cast<std::size_t>(n)) {
    const PixelSample p = dataset.locate(dist(rng));
    if (dataset.is_held_out(p) || (accept && !accept(p))) {
      if (++rejected > kMaxConsecutiveRejections) throw EmptyMask("sample_pixels: no acceptable pixels");
      continue;
    }
    rejected = 0;
    out.push_back(p);
  }
  return out;
}

std::vector<PixelSample> sample_pixels(const PyramidDataset& dataset, int n, std::mt19937_64& rng) {
  return sample_pixels_where(dataset, n, rng, nullptr);
}

GradientSet::GradientSet(const LodTree& tree) : tree_(&tree), grads_(tree.size()) {}

GradientSet::GradientSet(const GradientSet& other) : tree_(other.tree_), grads_(other.grads_.size()) {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (other.grads_[i]) grads_[i] = std::make_unique<FieldGradient>(*other.grads_[i]);
  }
}

GradientSet& GradientSet::operator=(const GradientSet& other) {
  if (this != &other) *this = GradientSet(other);
  return *this;
}

FieldGradient& GradientSet::at(std::size_t node) {
  auto& g = grads_.at(node);
  if (!g) g = std::make_unique<FieldGradient>(resident_field(*tree_, node));
  return *g;
}

const FieldGradient* GradientSet::find(std::size_t node) const { return grads_.at(node).get(); }

void GradientSet::clear() {
  for (auto& g : grads_) {
    if (g) g->clear();
  }
}

void GradientSet::add(const GradientSet& other, std::span<const std::size_t> nodes) {
  if (other.grads_.size() != grads_.size()) throw LengthMismatch("GradientSet::add: tree sizes differ");
  auto add_one = [&](std::size_t i) {
    const auto& src = other.grads_[i];
    if (!src || src->empty()) return;
    if (!grads_[i]) {
      grads_[i] = std::make_unique<FieldGradient>(*src);
    } else {
      grads_[i]->add(*src);
    }
  };
  if (nodes.empty()) {
    for (std::size_t i = 0; i < grads_.size(); ++i) add_one(i);
  } else {
    for (const std::size_t i : nodes) add_one(i);
  }
}

double rgb_loss(const Vec3& pred, const Vec3& target) { return (pred - target).squaredNorm() / 3.0; }

namespace {

struct IntervalStats {
  std::vector<double> mid;
  std::vector<double> len;
};

IntervalStats interval_stats(std::span<const double> weights, std::span<const std::pair<double, double>> intervals) {
  if (weights.size() != intervals.size()) throw LengthMismatch("distortion loss: weights and intervals differ");
  IntervalStats s;
  s.mid.reserve(intervals.size());
  s.len.reserve(intervals.size());
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    s.mid.push_back(0.5 * (intervals[i].first + intervals[i].second));
    s.len.push_back(intervals[i].second - intervals[i].first);
    if (i > 0 && s.mid[i] < s.mid[i - 1]) throw std::invalid_argument("distortion loss: intervals must be sorted");
  }
  return s;
}

// sum_j w_j |m_i - m_j| for every i, via prefix sums over sorted midpoints.
std::vector<double> pairwise_spread(std::span<const double> w, const std::vector<double>& m) {
  const std::size_t n = w.size();
  const double w_total = std::accumulate(w.begin(), w.end(), 0.0);
  double wm_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) wm_total += w[i] * m[i];
  std::vector<double> out(n);
  double w_below = 0.0;
  double wm_below = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w_above = w_total - w_below - w[i];
    const double wm_above = wm_total - wm_below - w[i] * m[i];
    out[i] = (m[i] * w_below - wm_below) + (wm_above - m[i] * w_above);
    w_below += w[i];
    wm_below += w[i] * m[i];
  }
  return out;
}

}  // namespace

double distortion_loss(std::span<const double> weights, std::span<const std::pair<double, double>> intervals) {
  const IntervalStats s = interval_stats(weights, intervals);
  const std::vector<double> spread = pairwise_spread(weights, s.mid);
  double loss = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    loss += weights[i] * spread[i] + weights[i] * weights[i] * s.len[i] / 3.0;
  }
  return loss;
}

std::vector<double> distortion_loss_gradient(std::span<const double> weights,
                                             std::span<const std::pair<double, double>> intervals) {
  const IntervalStats s = interval_stats(weights, intervals);
  std::vector<double> g = pairwise_spread(weights, s.mid);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * g[i] + 2.0 * weights[i] * s.len[i] / 3.0;
  return g;
}

double transparency_loss(const LodTree& tree, int n_points, CounterRng& rng, const NodeMask* available,
                         GradientSet* grads, double scale) {
  if (n_points < 1) throw std::invalid_argument("transparency_loss: n_points must be >= 1");
  double sum = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const Vec3 x = uniform_point(tree.root_aabb(), rng);
    const std::size_t node = resolve_node(tree, x, tree.max_depth(), available);
    const RadianceField& field = resident_field(tree, node);
    const Vec3 local = world_to_local(tree.node(node).aabb, x);
    const double e = std::exp(-field.density(local));
    sum += e;
    if (grads) field.accumulate_density_gradient(local, scale * e / n_points, grads->at(node));
  }
  return -sum / n_points;
}

double level_consistency_loss(const LodTree& tree, int n_points, CounterRng& rng, const NodeMask* available,
                              GradientSet* grads, double scale) {
  if (n_points < 1) throw std::invalid_argument("level_consistency_loss: n_points must be >= 1");
  struct Pair {
    std::size_t child, parent;
    Vec3 x;
    double diff;
  };
  std::vector<Pair> pairs;
  std::vector<std::size_t> chain;
  std::vector<double> sigma;
  for (int i = 0; i < n_points; ++i) {
    const Vec3 x = uniform_point(tree.root_aabb(), rng);
    chain.clear();
    resolve_node(tree, x, tree.max_depth(), available, &chain);
    sigma.clear();
    for (const std::size_t node : chain) {
      sigma.push_back(resident_field(tree, node).density(world_to_local(tree.node(node).aabb, x)));
    }
    for (std::size_t j = 1; j < chain.size(); ++j) pairs.push_back({chain[j], chain[j - 1], x, sigma[j] - sigma[j - 1]});
  }
  if (pairs.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(pairs.size());
  double sum = 0.0;
  for (const Pair& p : pairs) sum += p.diff * p.diff;
  if (grads) {
    for (const Pair& p : pairs) {
      const double g = scale * 2.0 * p.diff * inv;
      resident_field(tree, p.child)
          .accumulate_density_gradient(world_to_local(tree.node(p.child).aabb, p.x), g, grads->at(p.child));
      resident_field(tree, p.parent)
          .accumulate_density_gradient(world_to_local(tree.node(p.parent).aabb, p.x), -g, grads->at(p.parent));
    }
  }
  return sum * inv;
}

LossBreakdown accumulate_loss_gradients(const LodTree& tree, const PyramidDataset& dataset,
                                        std::span<const PixelSample> batch, const TrainConfig& config,
                                        const BatchContext& ctx, GradientSet* grads) {
  LossBreakdown out;
  const double inv_b = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  const int n = config.samples_per_ray;
  std::vector<std::size_t> nodes(static_cast<std::size_t>(n));
  std::vector<Vec3> locals(static_cast<std::size_t>(n));
  std::vector<double> sigma(static_cast<std::size_t>(n));
  std::vector<double> delta(static_cast<std::size_t>(n));
  std::vector<Vec3> color(static_cast<std::size_t>(n));
  std::vector<std::pair<double, double>> normalized(static_cast<std::size_t>(n));

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PixelSample& px = batch[i];
    const CameraModel& cam = dataset.camera(px.level, px.image);
    const Vec3 target = dataset.image(px.level, px.image).at(px.x, px.y);
    const auto ray = find_pixel_ray(cam, Vec2(px.x + 0.5, px.y + 0.5), tree.root_aabb());
    if (!ray) {
      out.rgb += inv_b * rgb_loss(config.background, target);
      continue;
    }
    CounterRng rng(config.seed, ctx.step, (ctx.stream << 32) | i);
    const RaySampleSet samples = sample_ray(*ray, cam, n, rng, config.jitter, config.perturb);
    const double span_t = ray->t_far - ray->t_near;
    for (int k = 0; k < n; ++k) {
      const SamplingSphere& s = samples.spheres[k];
      const std::size_t node =
          resolve_node(tree, s.center, target_level(tree, s.perturbed_radius, config.routing), ctx.available);
      nodes[k] = node;
      locals[k] = world_to_local(tree.node(node).aabb, s.center);
      const FieldSample fs = resident_field(tree, node).query(locals[k], s.direction, cam.appearance_id);
      sigma[k] = fs.density;
      color[k] = fs.color;
      delta[k] = samples.intervals[k].second - samples.intervals[k].first;
      normalized[k] = {(samples.intervals[k].first - ray->t_near) / span_t,
                       (samples.intervals[k].second - ray->t_near) / span_t};
    }
    const RayRender r = composite(sigma, delta, color, config.background);
    out.rgb += inv_b * rgb_loss(r.rgb, target);
    out.distortion += inv_b * distortion_loss(r.weights, normalized);
    if (!grads) continue;

    const Vec3 g_rgb = ctx.weight * inv_b * (2.0 / 3.0) * (r.rgb - target);
    std::vector<double> g_w = distortion_loss_gradient(r.weights, normalized);
    for (int k = 0; k < n; ++k) g_w[k] = ctx.weight * config.w1 * inv_b * g_w[k] + g_rgb.dot(color[k]);
    // d(loss)/d(tau_k) = T_{k+1} g_k - sum_{i>k} w_i g_i - T_final * (g_rgb . background)
    const double g_final = r.final_transmittance * g_rgb.dot(config.background);
    std::vector<double> g_tau(static_cast<std::size_t>(n));
    double suffix = 0.0;
    double t_next = r.final_transmittance;
    for (int k = n - 1; k >= 0; --k) {
      g_tau[k] = t_next * g_w[k] - suffix - g_final;
      suffix += r.weights[k] * g_w[k];
      t_next += r.weights[k];  // T_k = T_{k+1} + w_k
    }
    for (int k = 0; k < n; ++k) {
      const FieldCotangent cot{g_tau[k] * delta[k], r.weights[k] * g_rgb};
      resident_field(tree, nodes[k])
          .accumulate_gradient(locals[k], samples.spheres[k].direction, cam.appearance_id, cot, grads->at(nodes[k]));
    }
  }

  if (ctx.transparency_points > 0) {
    CounterRng rng(config.seed ^ kTransparencySalt, ctx.step, ctx.stream);
    out.transparency = transparency_loss(tree, ctx.transparency_points, rng, ctx.available,
                                         config.w3 > 0.0 ? grads : nullptr, ctx.weight * config.w3);
  }
  if (ctx.reg_points > 0) {
    CounterRng rng(config.seed ^ kRegSalt, ctx.step, ctx.stream);
    out.reg = level_consistency_loss(tree, ctx.reg_points, rng, ctx.available, config.w2 > 0.0 ? grads : nullptr,
                                     ctx.weight * config.w2);
  }
  out.total =
      ctx.weight * (out.rgb + config.w1 * out.distortion + config.w2 * out.reg + config.w3 * out.transparency);
  out.psnr = psnr_from_mse(out.rgb);
  return out;
}

AdamState::AdamState(const LodTree& tree) : moments_(tree.size()) {}

double AdamState::schedule(std::uint64_t step, const TrainConfig& config) {
  if (config.n_iterations <= 0) return 1.0;
  const double frac = std::min(1.0, static_cast<double>(step) / config.n_iterations);
  const double f = config.lr_final_fraction;
  return f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void AdamState::apply(LodTree& tree, const GradientSet& grads, const TrainConfig& config,
                      std::span<const std::size_t> nodes) {
  if (grads.size() != tree.size() || moments_.size() != tree.size()) {
    throw LengthMismatch("AdamState::apply: tree size mismatch");
  }
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double t = static_cast<double>(step_ + 1);
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  const double sched = schedule(step_, config);

  auto update_node = [&](std::size_t i) {
    const FieldGradient* g = grads.find(i);
    if (!g || g->empty()) return;
    auto& field = tree.node(i).field;
    if (!field) throw std::logic_error("AdamState::apply: gradient for non-resident node " + tree.node(i).id.name());
    auto& mom = moments_[i];
    if (!mom) mom = AdamMoments{std::vector<float>(field->param_count(), 0.0f), std::vector<float>(field->param_count(), 0.0f)};
    const auto values = g->values();
    std::span<float> params = field->params();
    auto step_entry = [&](std::size_t j, double lr) {
      const double gj = values[j];
      const double m = b1 * mom->m[j] + (1.0 - b1) * gj;
      const double v = b2 * mom->v[j] + (1.0 - b2) * gj * gj;
      mom->m[j] = static_cast<float>(m);
      mom->v[j] = static_cast<float>(v);
      params[j] = static_cast<float>(params[j] - lr * sched * (m / bc1) / (std::sqrt(v / bc2) + config.adam_eps));
    };
    for (const std::uint32_t v : g->touched_vertices()) {
      step_entry(field->density_offset() + v, config.lr_density);
      const std::size_t base = field->color_offset() + static_cast<std::size_t>(v) * kColorFeatures;
      for (int k = 0; k < kColorFeatures; ++k) step_entry(base + k, config.lr_color);
    }
    if (g->head_touched()) {
      for (std::size_t j = field->appearance_offset(); j < field->affine_offset(); ++j) step_entry(j, config.lr_appearance);
      for (std::size_t j = field->affine_offset(); j < field->param_count(); ++j) step_entry(j, config.lr_color);
    }
  };

  if (nodes.empty()) {
    for (std::size_t i = 0; i < tree.size(); ++i) update_node(i);
  } else {
    for (const std::size_t i : nodes) update_node(i);
  }
}

void check_finite(const LossBreakdown& loss, std::uint64_t step) {
  if (!std::isfinite(loss.rgb) || !std::isfinite(loss.distortion) || !std::isfinite(loss.reg) ||
      !std::isfinite(loss.transparency) || !std::isfinite(loss.total)) {
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + ": rgb=" + std::to_string(loss.rgb) +
                        " distort=" + std::to_string(loss.distortion) + " reg=" + std::to_string(loss.reg) +
                        " trans=" + std::to_string(loss.transparency));
  }
}

LossBreakdown train_step(LodTree& tree, const PyramidDataset& dataset, const TrainConfig& config, AdamState& adam,
                         std::mt19937_64& rng, GradientSet& grads) {
  const std::vector<PixelSample> batch = sample_pixels(dataset, config.rays_per_batch, rng);
  grads.clear();
  BatchContext ctx;
  ctx.step = adam.step();
  ctx.transparency_points = config.transparency_samples_per_step;
  ctx.reg_points = config.reg_samples_per_step;
  const LossBreakdown loss = accumulate_loss_gradients(tree, dataset, batch, config, ctx, &grads);
  check_finite(loss, adam.step());
  adam.apply(tree, grads, config);
  adam.advance();
  return loss;
}

namespace {
void write_log_row(std::ostream& os, std::uint64_t step, const LossBreakdown& l) {
  os << step << ',' << l.rgb << ',' << l.distortion << ',' << l.reg << ',' << l.transparency << ',' << l.psnr << '\n';
}
}  // namespace

TrainReport fit(LodTree& tree, const PyramidDataset& dataset, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  TrainReport report;
  GradientSet grads(tree);
  AdamState adam(tree);
  std::mt19937_64 rng(config.seed);
  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path);
    if (!log) throw std::runtime_error("fit: cannot open log " + options.log_path);
    log.precision(9);
    log << "step,L_RGB,L_distort,L_reg,L_trans,PSNR\n";
  }
  for (int s = 0; s < config.n_iterations; ++s) {
    const LossBreakdown loss = train_step(tree, dataset, config, adam, rng, grads);
    report.trace.push_back(loss);
    if (log) write_log_row(log, static_cast<std::uint64_t>(s), loss);
    if (options.checkpoint_every > 0 && (s + 1) % options.checkpoint_every == 0 && !options.checkpoint_dir.empty()) {
      const auto dir = std::filesystem::path(options.checkpoint_dir) / ("step_" + std::to_string(s + 1));
      save_checkpoint(dir.string(), tree, adam);
    }
  }
  if (options.evaluate) report.heldout_psnr = evaluate_heldout(tree, dataset, config);
  return report;
}

RenderConfig render_config_for(const TrainConfig& config) {
  RenderConfig rc;
  rc.samples_per_ray = config.samples_per_ray;
  rc.jitter = config.jitter;
  rc.perturb = config.perturb;
  rc.routing = config.routing;
  rc.background = config.background;
  rc.min_transmittance = 0.0;
  rc.seed = config.seed;
  return rc;
}

std::vector<double> evaluate_heldout(const LodTree& tree, const PyramidDataset& dataset, const TrainConfig& config) {
  RenderConfig rc = render_config_for(config);
  rc.jitter = false;
  const TreeFieldSource source(tree);
  std::vector<double> out;
  for (int l = 0; l < dataset.levels(); ++l) {
    std::vector<PixelSample> pixels;
    for (int i = 0; i < dataset.image_count(); ++i) {
      const Image& img = dataset.image(l, i);
      for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
          const PixelSample p{l, i, x, y};
          if (dataset.holdout_every() == 0 || dataset.is_held_out(p)) pixels.push_back(p);
        }
      }
    }
    const std::size_t cap = static_cast<std::size_t>(std::max(1, config.eval_max_pixels));
    const std::size_t stride = std::max<std::size_t>(1, (pixels.size() + cap - 1) / cap);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < pixels.size(); j += stride) {
      const PixelSample& p = pixels[j];
      const CameraModel& cam = dataset.camera(p.level, p.image);
      const Vec3 target = dataset.image(p.level, p.image).at(p.x, p.y);
      Vec3 rgb = rc.background;
      if (const auto ray = find_pixel_ray(cam, Vec2(p.x + 0.5, p.y + 0.5), tree.root_aabb())) {
        CounterRng rng = pixel_rng(rc, cam, p.x, p.y);
        rgb = render_ray(tree, source, *ray, cam, rc, rng).rgb;
      }
      sum += rgb_loss(rgb, target);
      ++count;
    }
    out.push_back(count ? psnr_from_mse(sum / static_cast<double>(count)) : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

}  // namespace lodnerf
