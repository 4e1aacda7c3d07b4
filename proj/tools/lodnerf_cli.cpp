// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: build, train, render, stats, export-synthetic.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lodnerf/distrib.hpp"
#include "lodnerf/errors.hpp"
#include "lodnerf/scene_io.hpp"

namespace fs = std::filesystem;
using namespace lodnerf;

namespace {

// Stable exit codes.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitParse = 2;
constexpr int kExitEmptyObservations = 3;
constexpr int kExitNonFinite = 4;

void print_psnr(std::size_t level, double psnr) {
  if (std::isnan(psnr)) {
    std::printf("held-out PSNR level %zu: no held-out pixels\n", level);
  } else {
    std::printf("held-out PSNR level %zu: %.3f dB\n", level, psnr);
  }
}

struct BuildArgs {
  std::string colmap;
  std::string synthetic;
  std::uint64_t seed = 0;
  int max_depth = LodTree::kDefaultMaxDepth;
  int grid_size = 0;
  int resolution = 32;
  int n_appearance = 0;
  std::string out;
};

struct TrainArgs {
  std::string tree;
  std::string data;
  std::string colmap;
  std::string out;
  std::string log;
  std::string report;
  int iters = 1000;
  std::vector<double> weights;
  int workers = 1;
  int split_level = 1;
  int margin = kDefaultMaskMargin;
  int rays = 1024;
  int samples = 32;
  int pyramid_levels = 4;
  int holdout = 8;
  int checkpoint_every = 0;
  std::uint64_t seed = 0;
};

struct RenderArgs {
  std::string tree;
  std::string trajectory;
  std::string resolution;
  std::string out_dir;
  int samples = 32;
  bool no_perturb = false;
  bool leaf_only = false;
  std::uint64_t seed = 0;
};

struct StatsArgs {
  std::string tree;
  std::string workingset;
  std::string plot;
};

struct ExportArgs {
  std::string scene = "textured-plane";
  std::string out;
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
  int cameras = 32;
  int frames = 12;
  int points = 400;
};

CameraModel resized(const CameraModel& cam, int width, int height) {
  CameraModel c = cam;
  const double sx = static_cast<double>(width) / cam.width;
  const double sy = static_cast<double>(height) / cam.height;
  c.focal_length *= sx;
  c.principal_point = Vec2(cam.principal_point.x() * sx, cam.principal_point.y() * sy);
  c.width = width;
  c.height = height;
  return c;
}

void print_histogram(const LodTree& tree) {
  std::map<int, std::size_t> count;
  std::map<int, std::uint64_t> bytes;
  for (const OctreeNode& n : tree.nodes()) {
    ++count[n.id.level];
    bytes[n.id.level] += n.param_bytes();
  }
  for (const auto& [level, c] : count) {
    std::printf("  level %d: %zu nodes (of %llu), %llu bytes\n", level, c,
                static_cast<unsigned long long>(1ull << (3 * level)), static_cast<unsigned long long>(bytes[level]));
  }
}

int cmd_build(const BuildArgs& a, int threads) {
  (void)threads;
  std::vector<SparseObservation> observations;
  Aabb root(Vec3::Constant(-1.0), Vec3::Constant(1.0));
  if (!a.colmap.empty()) {
    if (!fs::is_directory(a.colmap)) throw ParseError(a.colmap, 0, "input directory does not exist");
    const ColmapModel model = load_colmap(a.colmap);
    const ObservationSet obs = observations_from_cloud(model.cloud, model.cameras);
    if (obs.skipped_behind_camera > 0) {
      std::printf("skipped %zu track entries behind their camera\n", obs.skipped_behind_camera);
    }
    observations = obs.observations;
    root = scene_bounds(model.cloud);
  } else {
    SyntheticSpec spec;
    spec.name = a.synthetic;
    spec.seed = a.seed;
    spec.render_images = false;
    const SyntheticScene scene = make_synthetic_scene(spec);
    observations = observations_from_cloud(scene.cloud, scene.train_cameras).observations;
    root = scene.root;
  }
  const int grid = a.grid_size > 0 ? a.grid_size : a.resolution;
  LodTree tree = prune_tree(root, grid, a.max_depth, observations);
  FieldConfig fc;
  fc.resolution = a.resolution;
  fc.n_appearance = a.n_appearance;
  allocate_fields(tree, fc, a.seed);
  save_tree(a.out, tree);
  std::printf("nodes: %zu\n", tree.size());
  print_histogram(tree);
  std::printf("retained fraction: %.6f (%zu of %llu)\n",
              static_cast<double>(tree.size()) / static_cast<double>(tree.perfect_node_count()), tree.size(),
              static_cast<unsigned long long>(tree.perfect_node_count()));
  std::printf("parent-closed: %s\n", is_parent_closed(tree) ? "yes" : "no");
  return kExitOk;
}

int cmd_train(const TrainArgs& a, int threads) {
  (void)threads;
  LodTree tree = load_tree(a.tree);
  auto [cameras, images] = load_dataset(a.data);
  TrainConfig cfg;
  cfg.n_iterations = a.iters;
  if (!a.weights.empty()) {
    if (a.weights.size() != 3) throw ParseError("--weights", 0, "expected w1,w2,w3");
    cfg.w1 = a.weights[0];
    cfg.w2 = a.weights[1];
    cfg.w3 = a.weights[2];
  }
  cfg.rays_per_batch = a.rays;
  cfg.samples_per_ray = a.samples;
  cfg.pyramid_levels = a.pyramid_levels;
  cfg.seed = a.seed;
  cfg.validate();
  const PyramidDataset dataset = build_pyramid(images, cameras, cfg.pyramid_levels, a.holdout);

  if (a.workers == 1) {
    FitOptions options;
    options.log_path = a.log;
    options.checkpoint_every = a.checkpoint_every;
    options.checkpoint_dir = a.out;
    const TrainReport report = fit(tree, dataset, cfg, options);
    save_tree(a.out, tree);
    for (std::size_t l = 0; l < report.heldout_psnr.size(); ++l) {
      print_psnr(l, report.heldout_psnr[l]);
    }
    return kExitOk;
  }
  const std::string colmap = !a.colmap.empty() ? a.colmap : (fs::path(a.data) / "colmap").string();
  if (!fs::is_directory(colmap)) throw ParseError(colmap, 0, "distributed training needs a sparse model (--colmap)");
  const ColmapModel model = load_colmap(colmap);
  const ObservationSet obs = observations_from_cloud(model.cloud, model.cameras);
  const DistributionPlan p = plan(tree, a.split_level, a.workers, obs.observations, cameras, a.margin);
  const DistributedReport report = simulate_distributed_fit(tree, dataset, p, cfg);
  save_tree(a.out, tree);
  {
    std::ofstream out(fs::path(a.out) / "plan.json");
    out << plan_to_json(p) << '\n';
  }
  write_distributed_csv(a.log.empty() ? (fs::path(a.out) / "distributed.csv").string() : a.log, report);
  std::printf("workers: %d, total bytes %llu\n", a.workers, static_cast<unsigned long long>(report.total_bytes));
  for (std::size_t w = 0; w < report.worker_bytes.size(); ++w) {
    std::printf("  worker %zu resident bytes %llu (%.2f%%)\n", w,
                static_cast<unsigned long long>(report.worker_bytes[w]),
                100.0 * static_cast<double>(report.worker_bytes[w]) / static_cast<double>(report.total_bytes));
  }
  const std::vector<double> psnr = evaluate_heldout(tree, dataset, cfg);
  for (std::size_t l = 0; l < psnr.size(); ++l) print_psnr(l, psnr[l]);
  return kExitOk;
}

int cmd_render(const RenderArgs& a, int threads) {
  std::vector<CameraModel> trajectory = load_trajectory(a.trajectory);
  const LodTree tree = load_tree(a.tree);
  if (!a.resolution.empty()) {
    int w = 0;
    int h = 0;
    char sep = 0;
    std::istringstream in(a.resolution);
    if (!(in >> w >> sep >> h) || sep != 'x' || w < 1 || h < 1) {
      throw ParseError("--resolution", 0, "expected WIDTHxHEIGHT");
    }
    for (auto& c : trajectory) c = resized(c, w, h);
  }
  RenderConfig rc;
  rc.samples_per_ray = a.samples;
  rc.perturb = !a.no_perturb;
  rc.routing = a.leaf_only ? Routing::kLeafOnly : Routing::kHierarchical;
  rc.seed = a.seed;
  rc.threads = std::max(1, threads);
  fs::create_directories(a.out_dir);
  const TreeFieldSource source(tree);
  std::vector<WorkingSetReport> reports;
  std::vector<Image> frames;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    FrameRender f = render_frame(tree, source, trajectory[i], rc, static_cast<int>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
    write_png((fs::path(a.out_dir) / name).string(), f.image);
    std::printf("frame %zu: %zu nodes, fraction %.6f\n", i, f.report.touched_nodes.size(), f.report.fraction);
    reports.push_back(std::move(f.report));
    frames.push_back(std::move(f.image));
  }
  write_working_set_csv((fs::path(a.out_dir) / "workingset.csv").string(), reports);
  TrajectoryRender tr;
  tr.frames = std::move(frames);
  compute_popup(tr);
  std::printf("popup max %.6f mean %.6f\n", tr.popup_max, tr.popup_mean);
  return kExitOk;
}

void write_svg(const std::string& path, const std::vector<WorkingSetRow>& rows) {
  constexpr double kW = 640, kH = 360, kPad = 48;
  double top = 0.0;
  for (const auto& r : rows) top = std::max(top, r.fraction);
  top = top > 0.0 ? top * 1.1 : 1.0;
  const double n = std::max<std::size_t>(1, rows.size() - (rows.size() > 1 ? 1 : 0));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
      << kW << ' ' << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-size=\"14\">frame</text>\n"
      << "<text x=\"14\" y=\"" << kH / 2 << "\" font-size=\"14\" transform=\"rotate(-90 14 " << kH / 2
      << ")\" text-anchor=\"middle\">working-set fraction</text>\n"
      << "<text x=\"" << kPad - 4 << "\" y=\"" << kPad + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << top
      << "</text>\n"
      << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double x = kPad + (kW - 2 * kPad) * static_cast<double>(i) / n;
    const double y = kH - kPad - (kH - 2 * kPad) * rows[i].fraction / top;
    out << x << ',' << y << ' ';
  }
  out << "\"/>\n</svg>\n";
}

int cmd_stats(const StatsArgs& a, int threads) {
  (void)threads;
  const std::vector<WorkingSetRow> rows = read_working_set_csv(a.workingset);
  if (rows.empty()) throw ParseError(a.workingset, 0, "no frames");
  double max_f = 0.0;
  double sum_f = 0.0;
  for (const auto& r : rows) {
    max_f = std::max(max_f, r.fraction);
    sum_f += r.fraction;
  }
  std::printf("frames: %zu\nmax fraction: %.6f\nmean fraction: %.6f\n", rows.size(), max_f,
              sum_f / static_cast<double>(rows.size()));
  if (!a.tree.empty()) {
    const LodTree tree = load_tree(a.tree);
    std::printf("total bytes: %llu\n", static_cast<unsigned long long>(tree.total_param_bytes()));
    print_histogram(tree);
  }
  const std::string plot = !a.plot.empty() ? a.plot : (fs::path(a.workingset).replace_extension(".svg")).string();
  write_svg(plot, rows);
  std::printf("plot: %s\n", plot.c_str());
  return kExitOk;
}

int cmd_export(const ExportArgs& a, int threads) {
  (void)threads;
  SyntheticSpec spec;
  spec.name = a.scene;
  spec.seed = a.seed;
  spec.width = a.width;
  spec.height = a.height;
  spec.n_cameras = a.cameras;
  spec.n_trajectory = a.frames;
  spec.n_points = a.points;
  const SyntheticScene scene = make_synthetic_scene(spec);
  save_dataset(a.out, scene.train_cameras, scene.train_images);
  ColmapModel model;
  model.cloud = scene.cloud;
  model.cameras = scene.train_cameras;
  for (std::size_t i = 0; i < scene.train_cameras.size(); ++i) {
    model.image_ids.push_back(static_cast<std::uint32_t>(i + 1));
    char name[32];
    std::snprintf(name, sizeof(name), "image_%04zu.png", i);
    model.image_names.emplace_back(name);
  }
  write_colmap((fs::path(a.out) / "colmap").string(), model);
  save_trajectory((fs::path(a.out) / "zoom_out.json").string(), scene.zoom_out);
  save_trajectory((fs::path(a.out) / "orbit.json").string(), scene.orbit);
  std::printf("scene %s: %zu cameras, %zu sparse points -> %s\n", a.scene.c_str(), scene.train_cameras.size(),
              scene.cloud.points.size(), a.out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Level-of-detail octree radiance fields"};
  app.set_config("--config", "", "key=value configuration file; flags override it");
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Build and prune a tree from sparse points");
  auto* b_colmap = b->add_option("--colmap", build.colmap, "COLMAP text model directory");
  auto* b_syn = b->add_option("--synthetic", build.synthetic, "Synthetic scene name");
  b_colmap->excludes(b_syn);
  b->add_option("--max-depth", build.max_depth, "Deepest octree level")->check(CLI::NonNegativeNumber);
  b->add_option("--grid-size", build.grid_size, "Cells per node edge for GSD (default: --resolution)");
  b->add_option("--resolution", build.resolution, "Field vertices per node edge")->check(CLI::Range(2, 4096));
  b->add_option("--n-appearance", build.n_appearance, "Appearance embeddings per node");
  b->add_option("--seed", build.seed, "Random seed");
  b->add_option("--out", build.out, "Output tree directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a tree on a dataset");
  t->add_option("--tree", train.tree, "Input tree directory")->required();
  t->add_option("--data", train.data, "Dataset directory (dataset.json)")->required();
  t->add_option("--colmap", train.colmap, "Sparse model for the distributed plan (default: DATA/colmap)");
  t->add_option("--iters", train.iters, "Training steps")->check(CLI::NonNegativeNumber);
  t->add_option("--weights", train.weights, "Loss weights w1,w2,w3")->delimiter(',')->expected(3);
  t->add_option("--workers", train.workers, "Simulated workers")->check(CLI::PositiveNumber);
  t->add_option("--split-level", train.split_level, "First level owned by workers")->check(CLI::PositiveNumber);
  t->add_option("--margin", train.margin, "Pixel-mask margin at level 0")->check(CLI::NonNegativeNumber);
  t->add_option("--rays", train.rays, "Rays per batch")->check(CLI::PositiveNumber);
  t->add_option("--samples", train.samples, "Samples per ray")->check(CLI::PositiveNumber);
  t->add_option("--pyramid-levels", train.pyramid_levels, "Pyramid levels")->check(CLI::PositiveNumber);
  t->add_option("--holdout", train.holdout, "Hold out every N-th pixel (0: none)")->check(CLI::NonNegativeNumber);
  t->add_option("--checkpoint-every", train.checkpoint_every, "Checkpoint period in steps (0: end only)");
  t->add_option("--seed", train.seed, "Random seed");
  t->add_option("--out", train.out, "Output checkpoint directory")->required();
  t->add_option("--log", train.log, "Loss log CSV");

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render a trajectory and its working sets");
  r->add_option("--tree", render.tree, "Tree directory")->required();
  r->add_option("--trajectory", render.trajectory, "Trajectory JSON")->required();
  r->add_option("--resolution", render.resolution, "Override frame size, WIDTHxHEIGHT");
  r->add_option("--samples", render.samples, "Samples per ray")->check(CLI::PositiveNumber);
  r->add_flag("--no-perturb", render.no_perturb, "Disable sampling-radius perturbation");
  r->add_flag("--leaf-only", render.leaf_only, "Answer every sample at the deepest retained node");
  r->add_option("--seed", render.seed, "Random seed");
  r->add_option("--out-dir", render.out_dir, "Output directory")->required();

  StatsArgs stats;
  auto* s = app.add_subcommand("stats", "Summarize a working-set CSV");
  s->add_option("--tree", stats.tree, "Tree directory for the per-level byte breakdown");
  s->add_option("--workingset", stats.workingset, "workingset.csv from render")->required();
  s->add_option("--plot", stats.plot, "SVG output (default: CSV path with .svg)");

  ExportArgs ex;
  auto* e = app.add_subcommand("export-synthetic", "Write a synthetic dataset, sparse model and trajectories");
  e->add_option("--scene", ex.scene, "Scene name")
      ->check(CLI::IsMember(synthetic_scene_names()));
  e->add_option("--out", ex.out, "Output directory")->required();
  e->add_option("--seed", ex.seed, "Random seed");
  e->add_option("--width", ex.width, "Image width")->check(CLI::PositiveNumber);
  e->add_option("--height", ex.height, "Image height")->check(CLI::PositiveNumber);
  e->add_option("--cameras", ex.cameras, "Training cameras")->check(CLI::PositiveNumber);
  e->add_option("--frames", ex.frames, "Trajectory frames")->check(CLI::PositiveNumber);
  e->add_option("--points", ex.points, "Sparse points")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitParse;
  }

  try {
    if (*b) {
      if (build.colmap.empty() && build.synthetic.empty()) {
        std::fprintf(stderr, "error: build needs --colmap DIR or --synthetic NAME\n");
        return kExitParse;
      }
      return cmd_build(build, threads);
    }
    if (*t) return cmd_train(train, threads);
    if (*r) return cmd_render(render, threads);
    if (*s) return cmd_stats(stats, threads);
    if (*e) return cmd_export(ex, threads);
  } catch (const ParseError& err) {
    std::fprintf(stderr, "parse error: %s\n", err.what());
    return kExitParse;
  } catch (const EmptyObservations& err) {
    std::fprintf(stderr, "empty observations: %s\n", err.what());
    return kExitEmptyObservations;
  } catch (const NonFiniteLoss& err) {
    std::fprintf(stderr, "non-finite loss: %s\n", err.what());
    return kExitNonFinite;
  } catch (const UnknownSceneSpec& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitParse;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitFailure;
  }
  return kExitFailure;
}
