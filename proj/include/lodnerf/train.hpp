// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lodnerf/field.hpp"
#include "lodnerf/geometry.hpp"
#include "lodnerf/image.hpp"
#include "lodnerf/octree.hpp"
#include "lodnerf/render.hpp"

namespace lodnerf {

struct TrainConfig {
  double w1 = 0.002;  // distortion
  double w2 = 0.01;   // inter-level density consistency
  double w3 = 0.001;  // transparency
  double lr_density = 0.2;
  double lr_color = 0.2;
  double lr_appearance = 0.005;
  /// Cosine schedule decays every rate to this fraction of its start value.
  double lr_final_fraction = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-15;
  int n_iterations = 1000;
  int rays_per_batch = 1024;
  int samples_per_ray = 32;
  int pyramid_levels = 4;
  int transparency_samples_per_step = 1024;
  int reg_samples_per_step = 1024;
  bool jitter = true;
  bool perturb = true;
  Routing routing = Routing::kHierarchical;
  Vec3 background = Vec3::Ones();
  std::uint64_t seed = 0;
  /// Held-out pixels rendered per pyramid level by evaluate_heldout.
  int eval_max_pixels = 4096;

  void validate() const;
};

/// One training pixel: pyramid level, image index, pixel coordinates.
struct PixelSample {
  int level = 0;
  int image = 0;
  int x = 0;
  int y = 0;
  bool operator==(const PixelSample&) const = default;
};

/// Image pyramid over all training views. Pixels are addressed by a
/// flattened index that runs over levels, then images, then rows.
class PyramidDataset {
 public:
  PyramidDataset(std::vector<std::vector<Image>> images, std::vector<std::vector<CameraModel>> cameras,
                 int holdout_every);

  int levels() const { return static_cast<int>(images_.size()); }
  int image_count() const { return static_cast<int>(images_.front().size()); }
  const Image& image(int level, int index) const { return images_[level][index]; }
  const CameraModel& camera(int level, int index) const { return cameras_[level][index]; }
  std::uint64_t pixel_count() const { return offsets_.back(); }
  std::uint64_t level_pixel_count(int level) const;
  PixelSample locate(std::uint64_t flat_index) const;
  /// Every holdout_every-th pixel of each image (by row-major index) is held
  /// out of training; 0 disables.
  int holdout_every() const { return holdout_every_; }
  bool is_held_out(const PixelSample& p) const;

 private:
  std::vector<std::vector<Image>> images_;
  std::vector<std::vector<CameraModel>> cameras_;
  int holdout_every_;
  std::vector<std::uint64_t> offsets_;  // prefix sums over (level, image)
};

/// Level 0 holds the originals; level l is box-downsampled l times with the
/// camera rescaled to match. Throws ImageTooSmall, LengthMismatch.
PyramidDataset build_pyramid(std::span<const Image> images, std::span<const CameraModel> cameras, int levels,
                             int holdout_every = 0);

/// Uniform over the flattened training-pixel index; held-out pixels are
/// rejected and redrawn.
std::vector<PixelSample> sample_pixels(const PyramidDataset& dataset, int n, std::mt19937_64& rng);
/// Same draw sequence as sample_pixels, additionally rejecting pixels that
/// fail `accept`. Throws EmptyMask after a long run of rejections.
std::vector<PixelSample> sample_pixels_where(const PyramidDataset& dataset, int n, std::mt19937_64& rng,
                                             const std::function<bool(const PixelSample&)>& accept);

/// Per-node gradient buffers, created on first use.
class GradientSet {
 public:
  explicit GradientSet(const LodTree& tree);
  GradientSet(const GradientSet& other);
  GradientSet& operator=(const GradientSet& other);
  GradientSet(GradientSet&&) noexcept = default;
  GradientSet& operator=(GradientSet&&) noexcept = default;

  /// Requires the node's field to be resident.
  FieldGradient& at(std::size_t node);
  const FieldGradient* find(std::size_t node) const;
  std::size_t size() const { return grads_.size(); }
  void clear();
  /// Adds other's gradients for the listed nodes (all when empty).
  void add(const GradientSet& other, std::span<const std::size_t> nodes = {});

 private:
  const LodTree* tree_;
  std::vector<std::unique_ptr<FieldGradient>> grads_;
};

double rgb_loss(const Vec3& pred, const Vec3& target);

/// Sum_i Sum_j w_i w_j |m_i - m_j| + 1/3 Sum_i w_i^2 len_i over intervals
/// given in normalized ray distance. Throws LengthMismatch.
double distortion_loss(std::span<const double> weights, std::span<const std::pair<double, double>> intervals);
/// d(distortion_loss)/d(weights). Runs in linear time.
std::vector<double> distortion_loss_gradient(std::span<const double> weights,
                                             std::span<const std::pair<double, double>> intervals);

/// -mean(exp(-sigma)) at uniform points in the root box, each evaluated at
/// the deepest available node. When `grads` is given, adds
/// scale * d(loss)/d(params).
double transparency_loss(const LodTree& tree, int n_points, CounterRng& rng, const NodeMask* available = nullptr,
                         GradientSet* grads = nullptr, double scale = 1.0);

/// Mean of (sigma_child - sigma_parent)^2 over every available
/// (parent, child) pair along each uniform point's chain; 0 without pairs.
double level_consistency_loss(const LodTree& tree, int n_points, CounterRng& rng,
                              const NodeMask* available = nullptr, GradientSet* grads = nullptr, double scale = 1.0);

struct LossBreakdown {
  double rgb = 0.0;
  double distortion = 0.0;
  double reg = 0.0;
  double transparency = 0.0;
  double total = 0.0;
  /// From the batch rgb loss.
  double psnr = 0.0;
};

/// Everything one gradient pass needs besides the tree.
struct BatchContext {
  std::uint64_t step = 0;
  /// Separates random streams of concurrent workers.
  std::uint64_t stream = 0;
  /// Multiplies every loss term (1 / worker count in distributed runs).
  double weight = 1.0;
  /// Point counts for the transparency and level-consistency terms.
  int transparency_points = 0;
  int reg_points = 0;
  const NodeMask* available = nullptr;
};

/// Evaluates the weighted total loss on `batch` and, when `grads` is
/// given, adds its parameter gradient. Deterministic in (config.seed, ctx).
LossBreakdown accumulate_loss_gradients(const LodTree& tree, const PyramidDataset& dataset,
                                        std::span<const PixelSample> batch, const TrainConfig& config,
                                        const BatchContext& ctx, GradientSet* grads);

struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
};

/// Lazy Adam: only entries touched by the current gradient move. Moments
/// exist only for resident fields.
class AdamState {
 public:
  explicit AdamState(const LodTree& tree);

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }
  std::vector<std::optional<AdamMoments>>& moments() { return moments_; }
  const std::vector<std::optional<AdamMoments>>& moments() const { return moments_; }

  /// Cosine-decayed multiplier in [lr_final_fraction, 1] for `step`.
  static double schedule(std::uint64_t step, const TrainConfig& config);
  /// One update of every node in `nodes` (all when empty).
  void apply(LodTree& tree, const GradientSet& grads, const TrainConfig& config,
             std::span<const std::size_t> nodes = {});
  /// Advances the step counter; call once per update round.
  void advance() { ++step_; }

 private:
  std::uint64_t step_ = 0;
  std::vector<std::optional<AdamMoments>> moments_;
};

/// Samples a batch, accumulates all four losses, applies one Adam update.
/// Throws NonFiniteLoss.
LossBreakdown train_step(LodTree& tree, const PyramidDataset& dataset, const TrainConfig& config, AdamState& adam,
                         std::mt19937_64& rng, GradientSet& grads);

/// Throws NonFiniteLoss when any term is not finite.
void check_finite(const LossBreakdown& loss, std::uint64_t step);

struct FitOptions {
  /// Save a checkpoint every this many steps into checkpoint_dir (0: never).
  int checkpoint_every = 0;
  std::string checkpoint_dir;
  /// CSV log: step, L_RGB, L_distort, L_reg, L_trans, PSNR.
  std::string log_path;
  /// Run held-out evaluation at the end.
  bool evaluate = true;
};

struct TrainReport {
  std::vector<LossBreakdown> trace;
  /// Held-out PSNR per pyramid level (empty when not evaluated).
  std::vector<double> heldout_psnr;
};

TrainReport fit(LodTree& tree, const PyramidDataset& dataset, const TrainConfig& config,
                const FitOptions& options = {});

/// PSNR per pyramid level over (up to eval_max_pixels) held-out pixels,
/// rendered without jitter. NaN for levels without held-out pixels.
std::vector<double> evaluate_heldout(const LodTree& tree, const PyramidDataset& dataset, const TrainConfig& config);

/// Render settings matching training (no early termination).
RenderConfig render_config_for(const TrainConfig& config);

}  // namespace lodnerf
