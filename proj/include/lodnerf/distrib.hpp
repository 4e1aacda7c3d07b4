// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lodnerf/geometry.hpp"
#include "lodnerf/octree.hpp"
#include "lodnerf/train.hpp"

namespace lodnerf {

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  /// The rectangle covering the same footprint after `level` 2x downsamplings.
  PixelRect at_level(int level, int width, int height) const;
  bool operator==(const PixelRect&) const = default;
};

inline constexpr int kDefaultMaskMargin = 16;

/// Shared upper tree (levels below split_level) plus disjoint worker-owned
/// subtrees rooted at split_level.
struct DistributionPlan {
  int split_level = 1;
  int n_workers = 1;
  /// Margin used for the rectangles, in level-0 pixels.
  int margin = kDefaultMaskMargin;
  std::vector<NodeId> shared_node_ids;
  /// Subtree roots per worker.
  std::vector<std::vector<NodeId>> assignments;
  /// rects[worker][image] at level-0 resolution.
  std::vector<std::vector<PixelRect>> rects;

  /// Tree indices of shared nodes, ascending.
  std::vector<std::size_t> shared_nodes(const LodTree& tree) const;
  /// Tree indices of every node inside the worker's subtrees, ascending.
  std::vector<std::size_t> owned_nodes(const LodTree& tree, int worker) const;
  /// Availability mask: shared plus owned nodes.
  NodeMask worker_mask(const LodTree& tree, int worker) const;
  std::uint64_t shared_bytes(const LodTree& tree) const;
  /// Shared plus owned parameter bytes.
  std::uint64_t worker_bytes(const LodTree& tree, int worker) const;
};

/// Greedy largest-first assignment of level-`split_level` subtrees by
/// subtree_param_bytes; each worker's rectangle per image bounds the
/// projections of the observed points inside its subtrees, grown by
/// `margin`. A single worker gets the full images. Throws NoSubtreesAtLevel.
DistributionPlan plan(const LodTree& tree, int split_level, int n_workers,
                      std::span<const SparseObservation> observations, std::span<const CameraModel> cameras,
                      int margin = kDefaultMaskMargin);

std::string plan_to_json(const DistributionPlan& plan);
/// Throws ParseError.
DistributionPlan plan_from_json(const std::string& text, const std::string& source = "<json>");

/// sample_pixels restricted to the worker's rectangles. Throws EmptyMask.
std::vector<PixelSample> masked_sample_pixels(const PyramidDataset& dataset, const DistributionPlan& plan,
                                              int worker, int n, std::mt19937_64& rng);

struct DistributedStepRow {
  std::uint64_t step = 0;
  std::vector<double> worker_loss;
  /// Shared gradient floats sent by all workers, in bytes.
  std::uint64_t comm_bytes = 0;
  std::uint64_t max_worker_bytes = 0;
};

struct DistributedReport {
  std::vector<DistributedStepRow> rows;
  std::vector<std::uint64_t> worker_bytes;
  std::uint64_t total_bytes = 0;
  std::uint64_t shared_param_count = 0;
};

/// Runs config.n_iterations synchronized steps. Each worker holds a replica
/// with only shared and owned fields resident and trains on its own masked
/// batch with loss weight 1 / n_workers. Shared gradients are summed in
/// worker order and applied identically on every replica; owned gradients
/// stay local. The merged parameters are written back into `tree`.
/// Throws NonFiniteLoss, EmptyMask, std::logic_error on an access outside a
/// worker's nodes.
DistributedReport simulate_distributed_fit(LodTree& tree, const PyramidDataset& dataset,
                                           const DistributionPlan& plan, const TrainConfig& config);

/// Single-tree run that computes the same per-worker batches and routing
/// masks and applies the summed gradient with one optimizer.
void reference_distributed_fit(LodTree& tree, const PyramidDataset& dataset, const DistributionPlan& plan,
                               const TrainConfig& config);

/// step, loss_w0.., comm_bytes, max_worker_bytes.
void write_distributed_csv(const std::string& path, const DistributedReport& report);

}  // namespace lodnerf
