// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lodnerf/errors.hpp"
#include "lodnerf/scene_io.hpp"

namespace lodnerf {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("lodnerf_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& s) const { return path_ / s; }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kCameras =
    "# Camera list\n"
    "1 PINHOLE 64 48 50 50 32 24\n"
    "2 SIMPLE_PINHOLE 32 32 40 16 16\n";
const char* kImages =
    "# Image list\n"
    "1 1 0 0 0 0 0 0 1 a.png\n"
    "10 20 -1 30 40 -1\n"
    "7 0.7071067811865476 0 0.7071067811865476 0 0.1 0.2 3 2 b.png\n"
    "\n";
const char* kPoints =
    "# Points\n"
    "1 0 0 3 255 0 0 0.5 1 0 7 1\n"
    "2 0 0 -1 0 255 0 0.5 1 3\n";

void write_fixture(const TempDir& d) {
  write_file(d / "colmap/cameras.txt", kCameras);
  write_file(d / "colmap/images.txt", kImages);
  write_file(d / "colmap/points3D.txt", kPoints);
}

TEST(Colmap, LoadsFixture) {
  const TempDir d("colmap");
  write_fixture(d);
  const ColmapModel m = load_colmap((d / "colmap").string());
  ASSERT_EQ(m.cameras.size(), 2u);
  EXPECT_EQ(m.image_ids, (std::vector<std::uint32_t>{1, 7}));
  EXPECT_EQ(m.image_names[1], "b.png");
  EXPECT_EQ(m.cameras[0].width, 64);
  EXPECT_DOUBLE_EQ(m.cameras[1].focal_length, 40.0);
  EXPECT_EQ(m.cameras[1].appearance_id, 1);
  ASSERT_EQ(m.cloud.points.size(), 2u);
  EXPECT_EQ(m.cloud.points[0].track, (std::vector<TrackEntry>{{0, 0}, {1, 1}}));
  EXPECT_EQ(m.cloud.observation_count(), 3u);

  // Identity camera 0 sits at the origin looking down +z.
  const ObservationSet obs = observations_from_cloud(m.cloud, m.cameras);
  EXPECT_EQ(obs.skipped_behind_camera, 1u);
  ASSERT_EQ(obs.observations.size(), 2u);
  EXPECT_EQ(obs.observations[0].camera_index, 0);
  EXPECT_NEAR(obs.observations[0].radius, 3.0 / (2 * 50.0), 1e-12);
}

TEST(Colmap, WriteThenLoadRoundTrip) {
  const TempDir d("colmap_rt");
  write_fixture(d);
  const ColmapModel a = load_colmap((d / "colmap").string());
  write_colmap((d / "copy").string(), a);
  const ColmapModel b = load_colmap((d / "copy").string());
  ASSERT_EQ(b.cameras.size(), a.cameras.size());
  for (std::size_t i = 0; i < a.cameras.size(); ++i) {
    EXPECT_NEAR((a.cameras[i].center() - b.cameras[i].center()).norm(), 0.0, 1e-9);
    EXPECT_DOUBLE_EQ(a.cameras[i].focal_length, b.cameras[i].focal_length);
  }
  ASSERT_EQ(b.cloud.points.size(), a.cloud.points.size());
  EXPECT_EQ(b.cloud.points[1].track, a.cloud.points[1].track);
}

TEST(Colmap, UnknownImageReportsFileAndLine) {
  const TempDir d("colmap_bad");
  write_fixture(d);
  write_file(d / "colmap/points3D.txt", std::string(kPoints) + "3 0 0 1 0 0 0 0.1 99 0\n");
  try {
    load_colmap((d / "colmap").string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_NE(e.file().find("points3D.txt"), std::string::npos);
  }
}

TEST(Colmap, RejectsUnsupportedModelsAndMissingDirs) {
  const TempDir d("colmap_model");
  write_fixture(d);
  write_file(d / "colmap/cameras.txt", "1 OPENCV 64 48 50 50 32 24 0 0 0 0\n");
  EXPECT_THROW(load_colmap((d / "colmap").string()), UnsupportedCameraModel);
  write_file(d / "colmap/cameras.txt", "1 PINHOLE 64 48 50 60 32 24\n");
  EXPECT_THROW(load_colmap((d / "colmap").string()), UnsupportedCameraModel);
  EXPECT_THROW(load_colmap((d / "missing").string()), ParseError);
  write_file(d / "colmap/cameras.txt", "1 PINHOLE 64 48 fifty 50 32 24\n");
  EXPECT_THROW(load_colmap((d / "colmap").string()), ParseError);
}

TEST(SceneBounds, CubeAroundPoints) {
  SparsePointCloud cloud;
  cloud.points.push_back({0, Vec3(0, 0, 0), {}});
  cloud.points.push_back({1, Vec3(2, 1, 0.5), {}});
  const Aabb b = scene_bounds(cloud, 0.1);
  EXPECT_TRUE(b.is_cube());
  EXPECT_NEAR(b.edge(), 2.2, 1e-12);
  EXPECT_TRUE(b.contains(Vec3(2, 1, 0.5)));
  EXPECT_THROW(scene_bounds(SparsePointCloud{}), EmptyObservations);
}

TEST(Png, RoundTripQuantizes) {
  const TempDir d("png");
  Image img(7, 5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 7; ++x) img.set(x, y, Vec3(u(rng), u(rng), u(rng)));
  }
  write_png((d / "a.png").string(), img);
  const Image back = read_png((d / "a.png").string());
  ASSERT_EQ(back.width(), 7);
  ASSERT_EQ(back.height(), 5);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 7; ++x) {
      const Vec3 want = img.at(x, y).cwiseMax(0.0).cwiseMin(1.0);
      EXPECT_LE((back.at(x, y) - want).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-6);
    }
  }
  EXPECT_ANY_THROW(read_png((d / "missing.png").string()));
}

LodTree small_tree() {
  const std::vector<NodeId> ids{NodeId{}, NodeId{1, 0, 1, 0}, NodeId{2, 1, 3, 0}};
  LodTree t(Aabb::cube(Vec3(0.5, -1, 2), 3.0), 64, 3, ids);
  FieldConfig cfg;
  cfg.resolution = 3;
  cfg.n_appearance = 2;
  allocate_fields(t, cfg, 9);
  t.node(1).field.reset();  // non-resident nodes persist without a blob
  return t;
}

TEST(TreeIo, SaveLoadRoundTrip) {
  const TempDir d("tree");
  const LodTree t = small_tree();
  save_tree(d.str(), t);
  const LodTree back = load_tree(d.str());
  EXPECT_EQ(back.ids(), t.ids());
  EXPECT_EQ(back.grid_size(), 64);
  EXPECT_EQ(back.max_depth(), 3);
  EXPECT_EQ(back.root_aabb().min_corner(), t.root_aabb().min_corner());
  EXPECT_FALSE(back.node(1).field.has_value());
  for (const std::size_t i : {0u, 2u}) {
    const auto a = t.node(i).field->params(), b = back.node(i).field->params();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  EXPECT_TRUE(fs::exists(d / "L2_1_3_0.bin"));
  const std::string manifest = read_file(d / "manifest.json");
  EXPECT_NE(manifest.find("\"total_param_bytes\": " + std::to_string(t.total_param_bytes())), std::string::npos);
}

TEST(TreeIo, DetectsCorruption) {
  const TempDir d("tree_bad");
  save_tree(d.str(), small_tree());
  const fs::path blob = d / "L2_1_3_0.bin";
  const auto size = fs::file_size(blob);
  fs::resize_file(blob, size - 5);
  EXPECT_THROW(load_tree(d.str()), ChecksumMismatch);
  save_tree(d.str(), small_tree());
  {
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.put('\x7f');
  }
  EXPECT_THROW(load_tree(d.str()), ChecksumMismatch);

  save_tree(d.str(), small_tree());
  std::string manifest = read_file(d / "manifest.json");
  const auto pos = manifest.find("\"version\": 1");
  ASSERT_NE(pos, std::string::npos);
  manifest.replace(pos, 12, "\"version\": 9");
  write_file(d / "manifest.json", manifest);
  EXPECT_THROW(load_tree(d.str()), VersionMismatch);
  EXPECT_THROW(load_tree((d / "nowhere").string()), ParseError);
}

TEST(Trajectory, ParametricAndExplicit) {
  const TempDir d("traj");
  write_file(d / "zoom.json",
             R"({"type": "zoom", "target": [0, 0, 0], "eye_start": [0, -1, 0], "eye_end": [0, -8, 0],
                 "frames": 4, "width": 32, "height": 24, "fov_deg": 40})");
  const auto zoom = load_trajectory((d / "zoom.json").string());
  ASSERT_EQ(zoom.size(), 4u);
  EXPECT_NEAR(zoom[0].center().norm(), 1.0, 1e-12);
  EXPECT_NEAR(zoom[1].center().norm(), 2.0, 1e-12);  // log spacing
  EXPECT_NEAR(zoom[3].center().norm(), 8.0, 1e-12);
  EXPECT_EQ(zoom[2].width, 32);

  write_file(d / "orbit.json",
             R"({"type": "orbit", "center": [1, 0, 0], "radius": 2, "elevation": 0.5, "frames": 6,
                 "width": 16, "height": 16})");
  for (const CameraModel& c : load_trajectory((d / "orbit.json").string())) {
    EXPECT_NEAR((c.center() - Vec3(1, 0, 0.5)).norm(), 2.0, 1e-12);
  }

  save_trajectory((d / "cams.json").string(), zoom);
  const auto back = load_trajectory((d / "cams.json").string());
  ASSERT_EQ(back.size(), zoom.size());
  EXPECT_NEAR((back[2].center() - zoom[2].center()).norm(), 0.0, 1e-12);

  write_file(d / "bad.json", "not json");
  EXPECT_THROW(load_trajectory((d / "bad.json").string()), ParseError);
  write_file(d / "spiral.json", R"({"type": "spiral", "frames": 2, "width": 8, "height": 8})");
  EXPECT_THROW(load_trajectory((d / "spiral.json").string()), ParseError);
  write_file(d / "empty.json", "[]");
  EXPECT_THROW(load_trajectory((d / "empty.json").string()), ParseError);
}

TEST(WorkingSetCsv, RoundTripAndMalformedRows) {
  const TempDir d("ws");
  WorkingSetReport r;
  r.frame_id = 3;
  r.touched_nodes = {NodeId{}, NodeId{1, 0, 0, 0}};
  r.touched_bytes = 100;
  r.total_bytes = 400;
  r.fraction = 0.25;
  write_working_set_csv((d / "ws.csv").string(), std::vector<WorkingSetReport>{r});
  const auto rows = read_working_set_csv((d / "ws.csv").string());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].frame_id, 3);
  EXPECT_EQ(rows[0].touched_node_count, 2u);
  EXPECT_DOUBLE_EQ(rows[0].fraction, 0.25);

  write_file(d / "bad.csv", "frame,x\n1,2\n");
  try {
    read_working_set_csv((d / "bad.csv").string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1);
  }
  write_file(d / "frac.csv", "frame_id,touched_node_count,touched_bytes,total_bytes,fraction\n0,1,5,10,0.5\n1,1,5,10,1.5\n");
  try {
    read_working_set_csv((d / "frac.csv").string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Dataset, SaveLoadRoundTrip) {
  const TempDir d("dataset");
  const std::vector<CameraModel> cams{
      CameraModel::look_at(Vec3(0, -3, 0), Vec3::Zero(), Vec3(0, 0, 1), 20.0, 8, 6)};
  const std::vector<Image> imgs{Image(8, 6, Vec3(0.2, 0.4, 0.6))};
  save_dataset(d.str(), cams, imgs);
  const auto [c, i] = load_dataset(d.str());
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR((c[0].center() - cams[0].center()).norm(), 0.0, 1e-12);
  EXPECT_NEAR((i[0].at(3, 3) - Vec3(0.2, 0.4, 0.6)).norm(), 0.0, 0.01);
}

TEST(Synthetic, DeterministicAndKnownNames) {
  SyntheticSpec spec;
  spec.name = "colored-voxel-clusters";
  spec.width = 16;
  spec.height = 16;
  spec.n_cameras = 3;
  spec.n_trajectory = 4;
  spec.n_points = 50;
  spec.supersample = 1;
  spec.seed = 3;
  const SyntheticScene a = make_synthetic_scene(spec);
  const SyntheticScene b = make_synthetic_scene(spec);
  ASSERT_EQ(a.train_images.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.train_images[i], b.train_images[i]);
  EXPECT_EQ(a.cloud.points.size(), 50u);
  EXPECT_EQ(a.zoom_out.size(), 4u);
  EXPECT_EQ(a.orbit.size(), 4u);
  for (const SparsePoint& p : a.cloud.points) EXPECT_TRUE(a.root.contains(p.xyz));
  spec.seed = 4;
  EXPECT_NE(make_synthetic_scene(spec).train_images[0], a.train_images[0]);
  EXPECT_EQ(synthetic_scene_names().size(), 3u);
  spec.name = "teapot";
  EXPECT_THROW(make_synthetic_scene(spec), UnknownSceneSpec);
}

TEST(Synthetic, HalfResolutionOracleMatchesDownsampledOracle) {
  SyntheticSpec spec;
  spec.name = "nested-shells";
  spec.render_images = false;
  spec.n_cameras = 2;
  spec.width = 32;
  spec.height = 32;
  const SyntheticScene s = make_synthetic_scene(spec);
  const CameraModel& cam = s.train_cameras[0];
  const double step = 4e-3;
  const Image full = render_oracle(s.field, s.root, cam, s.background, 2, step);
  const Image half = render_oracle(s.field, s.root, cam.downsampled(1), s.background, 4, step);
  EXPECT_LT(mean_abs_delta(box_downsample(full), half), 2e-2);
}

}  // namespace
}  // namespace lodnerf
