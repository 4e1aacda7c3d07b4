// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/distrib.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "lodnerf/errors.hpp"

namespace lodnerf {

using nlohmann::json;

PixelRect PixelRect::at_level(int level, int width, int height) const {
  const int scale = 1 << level;
  PixelRect r{x0 / scale, y0 / scale, (x1 + scale - 1) / scale, (y1 + scale - 1) / scale};
  r.x1 = std::min(r.x1, width);
  r.y1 = std::min(r.y1, height);
  return r;
}

namespace {

void check_worker(const DistributionPlan& plan, int worker) {
  if (worker < 0 || worker >= plan.n_workers) {
    throw std::out_of_range("worker " + std::to_string(worker) + " not in plan");
  }
}

// Index of the level-`level` ancestor of node i, or nullopt above it.
std::optional<std::size_t> ancestor_at(const LodTree& tree, std::size_t i, int level) {
  if (tree.node(i).id.level < level) return std::nullopt;
  while (tree.node(i).id.level > level) i = static_cast<std::size_t>(tree.node(i).parent);
  return i;
}

// owner[i] = worker owning node i, -1 for shared nodes.
std::vector<int> node_owners(const LodTree& tree, const DistributionPlan& plan) {
  std::vector<int> root_owner(tree.size(), -1);
  for (int w = 0; w < plan.n_workers; ++w) {
    for (const NodeId& id : plan.assignments[w]) root_owner[tree.index_of(id)] = w;
  }
  std::vector<int> owner(tree.size(), -1);
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (const auto a = ancestor_at(tree, i, plan.split_level)) owner[i] = root_owner[*a];
  }
  return owner;
}

std::uint64_t nodes_bytes(const LodTree& tree, std::span<const std::size_t> nodes) {
  std::uint64_t b = 0;
  for (const std::size_t i : nodes) b += tree.node(i).param_bytes();
  return b;
}

std::vector<int> split_count(int total, int parts) {
  std::vector<int> out(static_cast<std::size_t>(parts), total / parts);
  for (int w = 0; w < total % parts; ++w) ++out[w];
  return out;
}

}  // namespace

std::vector<std::size_t> DistributionPlan::shared_nodes(const LodTree& tree) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (tree.node(i).id.level < split_level) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> DistributionPlan::owned_nodes(const LodTree& tree, int worker) const {
  check_worker(*this, worker);
  const std::vector<int> owner = node_owners(tree, *this);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (owner[i] == worker) out.push_back(i);
  }
  return out;
}

NodeMask DistributionPlan::worker_mask(const LodTree& tree, int worker) const {
  NodeMask mask(tree.size(), 0);
  for (const std::size_t i : shared_nodes(tree)) mask[i] = 1;
  for (const std::size_t i : owned_nodes(tree, worker)) mask[i] = 1;
  return mask;
}

std::uint64_t DistributionPlan::shared_bytes(const LodTree& tree) const {
  return nodes_bytes(tree, shared_nodes(tree));
}

std::uint64_t DistributionPlan::worker_bytes(const LodTree& tree, int worker) const {
  return shared_bytes(tree) + nodes_bytes(tree, owned_nodes(tree, worker));
}

DistributionPlan plan(const LodTree& tree, int split_level, int n_workers,
                      std::span<const SparseObservation> observations, std::span<const CameraModel> cameras,
                      int margin) {
  if (split_level < 1 || split_level > tree.max_depth()) {
    throw std::invalid_argument("plan: split level must lie in [1, max_depth]");
  }
  if (n_workers < 1) throw std::invalid_argument("plan: n_workers must be >= 1");
  if (margin < 0) throw std::invalid_argument("plan: margin must be >= 0");

  DistributionPlan p;
  p.split_level = split_level;
  p.n_workers = n_workers;
  p.margin = margin;
  p.assignments.assign(static_cast<std::size_t>(n_workers), {});
  struct Subtree {
    std::size_t index;
    std::uint64_t bytes;
  };
  std::vector<Subtree> subtrees;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const NodeId& id = tree.node(i).id;
    if (id.level < split_level) p.shared_node_ids.push_back(id);
    if (id.level == split_level) subtrees.push_back({i, subtree_param_bytes(tree, id)});
  }
  if (subtrees.empty()) throw NoSubtreesAtLevel("no retained nodes at level " + std::to_string(split_level));

  // Largest first onto the least-loaded worker; ties go to the lower index.
  std::stable_sort(subtrees.begin(), subtrees.end(),
                   [](const Subtree& a, const Subtree& b) { return a.bytes > b.bytes; });
  std::vector<std::uint64_t> load(static_cast<std::size_t>(n_workers), 0);
  std::vector<int> root_owner(tree.size(), -1);
  for (const Subtree& s : subtrees) {
    const auto w = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    load[w] += s.bytes;
    p.assignments[w].push_back(tree.node(s.index).id);
    root_owner[s.index] = static_cast<int>(w);
  }
  for (auto& a : p.assignments) std::sort(a.begin(), a.end());

  p.rects.assign(static_cast<std::size_t>(n_workers), std::vector<PixelRect>(cameras.size()));
  if (n_workers == 1) {
    for (std::size_t c = 0; c < cameras.size(); ++c) p.rects[0][c] = {0, 0, cameras[c].width, cameras[c].height};
    return p;
  }
  struct Bounds {
    double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
  };
  std::vector<std::vector<Bounds>> bounds(static_cast<std::size_t>(n_workers), std::vector<Bounds>(cameras.size()));
  for (const SparseObservation& o : observations) {
    if (!tree.root_aabb().contains(o.point)) continue;
    // A point on a shared face belongs to every subtree touching it.
    for (const Subtree& s : subtrees) {
      if (!tree.node(s.index).aabb.contains(o.point)) continue;
      const auto w = static_cast<std::size_t>(root_owner[s.index]);
      for (std::size_t c = 0; c < cameras.size(); ++c) {
        const auto uv = cameras[c].project(o.point);
        if (!uv) continue;
        Bounds& b = bounds[w][c];
        b.x0 = std::min(b.x0, uv->x());
        b.y0 = std::min(b.y0, uv->y());
        b.x1 = std::max(b.x1, uv->x());
        b.y1 = std::max(b.y1, uv->y());
      }
    }
  }
  for (int w = 0; w < n_workers; ++w) {
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      const Bounds& b = bounds[w][c];
      if (!(b.x0 <= b.x1)) continue;  // nothing projected
      const CameraModel& cam = cameras[c];
      // Pixel (x, y) covers [x, x + 1); clamp before converting to int.
      const auto lo = [&](double v, int limit) {
        return static_cast<int>(std::clamp(std::floor(v) - margin, 0.0, static_cast<double>(limit)));
      };
      const auto hi = [&](double v, int limit) {
        return static_cast<int>(std::clamp(std::floor(v) + 1.0 + margin, 0.0, static_cast<double>(limit)));
      };
      p.rects[w][c] = {lo(b.x0, cam.width), lo(b.y0, cam.height), hi(b.x1, cam.width), hi(b.y1, cam.height)};
    }
  }
  return p;
}

std::string plan_to_json(const DistributionPlan& p) {
  json shared = json::array();
  for (const NodeId& id : p.shared_node_ids) shared.push_back(id.name());
  json workers = json::array();
  for (int w = 0; w < p.n_workers; ++w) {
    json subtrees = json::array();
    for (const NodeId& id : p.assignments[w]) subtrees.push_back(id.name());
    json rects = json::array();
    for (const PixelRect& r : p.rects[w]) rects.push_back({r.x0, r.y0, r.x1, r.y1});
    workers.push_back({{"subtrees", subtrees}, {"rects", rects}});
  }
  const json j{{"split_level", p.split_level},
               {"n_workers", p.n_workers},
               {"margin", p.margin},
               {"shared", shared},
               {"workers", workers}};
  return j.dump(1);
}

DistributionPlan plan_from_json(const std::string& text, const std::string& source) {
  try {
    const json j = json::parse(text);
    DistributionPlan p;
    p.split_level = j.at("split_level").get<int>();
    p.n_workers = j.at("n_workers").get<int>();
    p.margin = j.at("margin").get<int>();
    for (const auto& s : j.at("shared")) p.shared_node_ids.push_back(NodeId::parse(s.get<std::string>()));
    const auto& workers = j.at("workers");
    if (static_cast<int>(workers.size()) != p.n_workers) throw ParseError(source, 0, "worker count mismatch");
    for (const auto& w : workers) {
      std::vector<NodeId> ids;
      for (const auto& s : w.at("subtrees")) ids.push_back(NodeId::parse(s.get<std::string>()));
      p.assignments.push_back(std::move(ids));
      std::vector<PixelRect> rects;
      for (const auto& r : w.at("rects")) {
        rects.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()});
      }
      p.rects.push_back(std::move(rects));
    }
    return p;
  } catch (const json::exception& e) {
    throw ParseError(source, 0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
}

std::vector<PixelSample> masked_sample_pixels(const PyramidDataset& dataset, const DistributionPlan& plan,
                                              int worker, int n, std::mt19937_64& rng) {
  check_worker(plan, worker);
  const auto& rects = plan.rects[worker];
  if (static_cast<int>(rects.size()) != dataset.image_count()) {
    throw LengthMismatch("masked_sample_pixels: plan and dataset disagree on image count");
  }
  std::vector<std::vector<PixelRect>> scaled(static_cast<std::size_t>(dataset.levels()));
  bool any = false;
  for (int l = 0; l < dataset.levels(); ++l) {
    for (int i = 0; i < dataset.image_count(); ++i) {
      const Image& img = dataset.image(l, i);
      scaled[l].push_back(rects[i].at_level(l, img.width(), img.height()));
      any = any || !scaled[l].back().empty();
    }
  }
  if (!any) throw EmptyMask("worker " + std::to_string(worker) + " sees no pixels");
  return sample_pixels_where(dataset, n, rng,
                             [&](const PixelSample& p) { return scaled[p.level][p.image].contains(p.x, p.y); });
}

namespace {

struct Worker {
  LodTree replica;
  NodeMask mask;
  std::vector<std::size_t> owned;
  std::unique_ptr<AdamState> adam;
  std::unique_ptr<GradientSet> grads;
  std::mt19937_64 rng;
};

BatchContext worker_context(const DistributionPlan& plan, const TrainConfig& config, int w, std::uint64_t step,
                            const NodeMask& mask) {
  BatchContext ctx;
  ctx.step = step;
  ctx.stream = static_cast<std::uint64_t>(w);
  ctx.weight = 1.0 / plan.n_workers;
  ctx.transparency_points = split_count(config.transparency_samples_per_step, plan.n_workers)[w];
  ctx.reg_points = split_count(config.reg_samples_per_step, plan.n_workers)[w];
  ctx.available = &mask;
  return ctx;
}

void validate_plan(const LodTree& tree, const PyramidDataset& dataset, const DistributionPlan& plan) {
  if (plan.n_workers < 1 || static_cast<int>(plan.assignments.size()) != plan.n_workers ||
      static_cast<int>(plan.rects.size()) != plan.n_workers) {
    throw std::invalid_argument("invalid plan: worker tables do not match n_workers");
  }
  for (const auto& r : plan.rects) {
    if (static_cast<int>(r.size()) != dataset.image_count()) {
      throw LengthMismatch("invalid plan: rectangle count differs from image count");
    }
  }
  const std::vector<int> owner = node_owners(tree, plan);
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (tree.node(i).id.level >= plan.split_level && owner[i] < 0) {
      throw std::invalid_argument("invalid plan: node " + tree.node(i).id.name() + " has no owner");
    }
  }
}

// Throws when a worker produced a gradient for a node outside its mask.
void assert_access(const GradientSet& grads, const NodeMask& mask, int worker) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const FieldGradient* g = grads.find(i);
    if (g && !g->empty() && !mask[i]) {
      throw std::logic_error("worker " + std::to_string(worker) + " wrote to unowned node " + std::to_string(i));
    }
  }
}

}  // namespace

DistributedReport simulate_distributed_fit(LodTree& tree, const PyramidDataset& dataset,
                                           const DistributionPlan& plan, const TrainConfig& config) {
  config.validate();
  validate_plan(tree, dataset, plan);
  const int k = plan.n_workers;
  const std::vector<std::size_t> shared = plan.shared_nodes(tree);
  const std::vector<int> rays = split_count(config.rays_per_batch, k);

  DistributedReport report;
  report.total_bytes = tree.total_param_bytes();
  for (const std::size_t i : shared) report.shared_param_count += tree.node(i).field ? tree.node(i).field->param_count() : 0;

  std::vector<std::unique_ptr<Worker>> workers;
  for (int w = 0; w < k; ++w) {
    auto wk = std::make_unique<Worker>(Worker{tree, plan.worker_mask(tree, w), plan.owned_nodes(tree, w), nullptr,
                                              nullptr, std::mt19937_64(config.seed + static_cast<std::uint64_t>(w))});
    // Drop every field the worker does not hold.
    for (std::size_t i = 0; i < tree.size(); ++i) {
      if (!wk->mask[i]) wk->replica.node(i).field.reset();
    }
    wk->adam = std::make_unique<AdamState>(wk->replica);
    wk->grads = std::make_unique<GradientSet>(wk->replica);
    report.worker_bytes.push_back(wk->replica.total_param_bytes());
    workers.push_back(std::move(wk));
  }
  const std::uint64_t max_bytes = *std::max_element(report.worker_bytes.begin(), report.worker_bytes.end());

  for (int s = 0; s < config.n_iterations; ++s) {
    const std::uint64_t step = workers[0]->adam->step();
    DistributedStepRow row;
    row.step = step;
    LossBreakdown sum;
    for (int w = 0; w < k; ++w) {
      Worker& wk = *workers[w];
      wk.grads->clear();
      const auto batch = masked_sample_pixels(dataset, plan, w, rays[w], wk.rng);
      const BatchContext ctx = worker_context(plan, config, w, step, wk.mask);
      const LossBreakdown loss = accumulate_loss_gradients(wk.replica, dataset, batch, config, ctx, wk.grads.get());
      check_finite(loss, step);
      assert_access(*wk.grads, wk.mask, w);
      row.worker_loss.push_back(loss.total);
      sum.total += loss.total;
    }
    // All-reduce barrier: shared gradients summed in fixed worker order.
    GradientSet reduced(workers[0]->replica);
    for (int w = 0; w < k; ++w) reduced.add(*workers[w]->grads, shared);
    for (int w = 0; w < k; ++w) {
      Worker& wk = *workers[w];
      wk.adam->apply(wk.replica, reduced, config, shared);
      if (!wk.owned.empty()) wk.adam->apply(wk.replica, *wk.grads, config, wk.owned);
      wk.adam->advance();
    }
    row.comm_bytes = report.shared_param_count * static_cast<std::uint64_t>(k) * sizeof(float);
    row.max_worker_bytes = max_bytes;
    report.rows.push_back(std::move(row));
  }

  // Merge: shared fields from worker 0, owned fields from their owners.
  for (const std::size_t i : shared) tree.node(i).field = workers[0]->replica.node(i).field;
  for (int w = 0; w < k; ++w) {
    for (const std::size_t i : workers[w]->owned) tree.node(i).field = workers[w]->replica.node(i).field;
  }
  return report;
}

void reference_distributed_fit(LodTree& tree, const PyramidDataset& dataset, const DistributionPlan& plan,
                               const TrainConfig& config) {
  config.validate();
  validate_plan(tree, dataset, plan);
  const int k = plan.n_workers;
  const std::vector<std::size_t> shared = plan.shared_nodes(tree);
  const std::vector<int> rays = split_count(config.rays_per_batch, k);
  std::vector<NodeMask> masks;
  std::vector<std::vector<std::size_t>> owned;
  std::vector<std::mt19937_64> rngs;
  std::vector<GradientSet> grads;
  for (int w = 0; w < k; ++w) {
    masks.push_back(plan.worker_mask(tree, w));
    owned.push_back(plan.owned_nodes(tree, w));
    rngs.emplace_back(config.seed + static_cast<std::uint64_t>(w));
    grads.emplace_back(tree);
  }
  AdamState adam(tree);
  for (int s = 0; s < config.n_iterations; ++s) {
    const std::uint64_t step = adam.step();
    GradientSet total(tree);
    for (int w = 0; w < k; ++w) {
      grads[w].clear();
      const auto batch = masked_sample_pixels(dataset, plan, w, rays[w], rngs[w]);
      const LossBreakdown loss = accumulate_loss_gradients(tree, dataset, batch, config,
                                                           worker_context(plan, config, w, step, masks[w]), &grads[w]);
      check_finite(loss, step);
      total.add(grads[w], shared);
    }
    for (int w = 0; w < k; ++w) {
      if (!owned[w].empty()) total.add(grads[w], owned[w]);
    }
    adam.apply(tree, total, config);
    adam.advance();
  }
}

void write_distributed_csv(const std::string& path, const DistributedReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(9);
  out << "step";
  const std::size_t k = report.worker_bytes.size();
  for (std::size_t w = 0; w < k; ++w) out << ",loss_w" << w;
  out << ",comm_bytes,max_worker_bytes\n";
  for (const auto& row : report.rows) {
    out << row.step;
    for (const double l : row.worker_loss) out << ',' << l;
    out << ',' << row.comm_bytes << ',' << row.max_worker_bytes << '\n';
  }
}

}  // namespace lodnerf
