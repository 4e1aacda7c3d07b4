// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/scene_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "lodnerf/errors.hpp"

namespace lodnerf {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t SparsePointCloud::observation_count() const {
  std::size_t n = 0;
  for (const auto& p : points) n += p.track.size();
  return n;
}

namespace {

struct NumberedLine {
  int number;
  std::string text;
};

// Lines of a COLMAP text file with comment lines removed. Blank lines are
// kept because images.txt uses them for images without 2D points.
std::vector<NumberedLine> read_colmap_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::vector<NumberedLine> lines;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    lines.push_back({number, line});
  }
  return lines;
}

bool is_blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

template <class T>
T parse_field(std::istringstream& is, const std::string& file, int line, const char* what) {
  T value;
  if (!(is >> value)) throw ParseError(file, line, std::string("expected ") + what);
  return value;
}

struct ColmapIntrinsics {
  int width, height;
  double focal;
  Vec2 principal;
};

}  // namespace

ColmapModel load_colmap(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw ParseError(dir, 0, "not a directory");

  const std::string cam_file = (root / "cameras.txt").string();
  std::map<std::uint32_t, ColmapIntrinsics> intrinsics;
  for (const auto& [number, text] : read_colmap_lines(cam_file)) {
    if (is_blank(text)) continue;
    std::istringstream is(text);
    const auto id = parse_field<std::uint32_t>(is, cam_file, number, "camera id");
    const auto model = parse_field<std::string>(is, cam_file, number, "camera model");
    ColmapIntrinsics c{};
    c.width = parse_field<int>(is, cam_file, number, "width");
    c.height = parse_field<int>(is, cam_file, number, "height");
    if (model == "SIMPLE_PINHOLE") {
      c.focal = parse_field<double>(is, cam_file, number, "f");
    } else if (model == "PINHOLE") {
      const double fx = parse_field<double>(is, cam_file, number, "fx");
      const double fy = parse_field<double>(is, cam_file, number, "fy");
      if (std::abs(fx - fy) > 1e-6 * std::abs(fx)) {
        throw UnsupportedCameraModel(cam_file + ":" + std::to_string(number) + ": fx != fy is not supported");
      }
      c.focal = fx;
    } else {
      throw UnsupportedCameraModel(cam_file + ":" + std::to_string(number) + ": camera model " + model);
    }
    c.principal.x() = parse_field<double>(is, cam_file, number, "cx");
    c.principal.y() = parse_field<double>(is, cam_file, number, "cy");
    if (c.width < 1 || c.height < 1 || !(c.focal > 0.0)) throw ParseError(cam_file, number, "invalid intrinsics");
    if (!intrinsics.emplace(id, c).second) throw ParseError(cam_file, number, "duplicate camera id");
  }

  ColmapModel model;
  const std::string img_file = (root / "images.txt").string();
  const auto img_lines = read_colmap_lines(img_file);
  std::map<std::uint32_t, int> image_index;
  for (std::size_t i = 0; i < img_lines.size(); ++i) {
    const auto& [number, text] = img_lines[i];
    if (is_blank(text)) continue;
    std::istringstream is(text);
    const auto image_id = parse_field<std::uint32_t>(is, img_file, number, "image id");
    const double qw = parse_field<double>(is, img_file, number, "qw");
    const double qx = parse_field<double>(is, img_file, number, "qx");
    const double qy = parse_field<double>(is, img_file, number, "qy");
    const double qz = parse_field<double>(is, img_file, number, "qz");
    Vec3 t;
    t.x() = parse_field<double>(is, img_file, number, "tx");
    t.y() = parse_field<double>(is, img_file, number, "ty");
    t.z() = parse_field<double>(is, img_file, number, "tz");
    const auto camera_id = parse_field<std::uint32_t>(is, img_file, number, "camera id");
    const auto name = parse_field<std::string>(is, img_file, number, "image name");
    const auto it = intrinsics.find(camera_id);
    if (it == intrinsics.end()) throw ParseError(img_file, number, "unknown camera id " + std::to_string(camera_id));
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-3) throw ParseError(img_file, number, "quaternion is not unit length");
    CameraModel cam;
    cam.rotation = q.normalized();
    cam.translation = t;
    cam.focal_length = it->second.focal;
    cam.principal_point = it->second.principal;
    cam.width = it->second.width;
    cam.height = it->second.height;
    cam.appearance_id = static_cast<int>(model.cameras.size());
    if (!image_index.emplace(image_id, static_cast<int>(model.cameras.size())).second) {
      throw ParseError(img_file, number, "duplicate image id");
    }
    model.cameras.push_back(cam);
    model.image_ids.push_back(image_id);
    model.image_names.push_back(name);
    ++i;  // the following line lists 2D points, which are not needed
  }

  const std::string pts_file = (root / "points3D.txt").string();
  for (const auto& [number, text] : read_colmap_lines(pts_file)) {
    if (is_blank(text)) continue;
    std::istringstream is(text);
    SparsePoint p;
    p.id = parse_field<std::uint64_t>(is, pts_file, number, "point id");
    p.xyz.x() = parse_field<double>(is, pts_file, number, "x");
    p.xyz.y() = parse_field<double>(is, pts_file, number, "y");
    p.xyz.z() = parse_field<double>(is, pts_file, number, "z");
    for (const char* c : {"r", "g", "b"}) parse_field<int>(is, pts_file, number, c);
    parse_field<double>(is, pts_file, number, "error");
    std::uint32_t image_id;
    while (is >> image_id) {
      const auto feature = parse_field<int>(is, pts_file, number, "point2D index");
      const auto it = image_index.find(image_id);
      if (it == image_index.end()) {
        throw ParseError(pts_file, number, "track references unknown image " + std::to_string(image_id));
      }
      p.track.push_back({it->second, feature});
    }
    if (!is.eof()) throw ParseError(pts_file, number, "malformed track");
    if (p.track.empty()) throw ParseError(pts_file, number, "point has an empty track");
    model.cloud.points.push_back(std::move(p));
  }
  return model;
}

void write_colmap(const std::string& dir, const ColmapModel& model) {
  const fs::path root(dir);
  fs::create_directories(root);
  std::ofstream cams(root / "cameras.txt");
  std::ofstream imgs(root / "images.txt");
  std::ofstream pts(root / "points3D.txt");
  if (!cams || !imgs || !pts) throw std::runtime_error("write_colmap: cannot write into " + dir);
  cams << std::setprecision(17) << "# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
  imgs << std::setprecision(17) << "# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[]\n";
  pts << std::setprecision(17) << "# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n";
  for (std::size_t i = 0; i < model.cameras.size(); ++i) {
    const CameraModel& c = model.cameras[i];
    const std::uint32_t id = i < model.image_ids.size() ? model.image_ids[i] : static_cast<std::uint32_t>(i + 1);
    const std::string name = i < model.image_names.size() ? model.image_names[i] : "image_" + std::to_string(i) + ".png";
    cams << id << " PINHOLE " << c.width << ' ' << c.height << ' ' << c.focal_length << ' ' << c.focal_length << ' '
         << c.principal_point.x() << ' ' << c.principal_point.y() << '\n';
    const Eigen::Quaterniond& q = c.rotation;
    imgs << id << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << c.translation.x() << ' '
         << c.translation.y() << ' ' << c.translation.z() << ' ' << id << ' ' << name << "\n\n";
  }
  for (const SparsePoint& p : model.cloud.points) {
    pts << p.id << ' ' << p.xyz.x() << ' ' << p.xyz.y() << ' ' << p.xyz.z() << " 128 128 128 0";
    for (const TrackEntry& t : p.track) {
      const std::uint32_t id = static_cast<std::size_t>(t.image_index) < model.image_ids.size()
                                   ? model.image_ids[t.image_index]
                                   : static_cast<std::uint32_t>(t.image_index + 1);
      pts << ' ' << id << ' ' << t.feature_index;
    }
    pts << '\n';
  }
}

ObservationSet observations_from_cloud(const SparsePointCloud& cloud, std::span<const CameraModel> cameras) {
  ObservationSet out;
  for (const SparsePoint& p : cloud.points) {
    for (const TrackEntry& t : p.track) {
      if (t.image_index < 0 || static_cast<std::size_t>(t.image_index) >= cameras.size()) {
        throw std::out_of_range("observations_from_cloud: track references unknown camera");
      }
      const CameraModel& cam = cameras[t.image_index];
      if (cam.world_to_camera(p.xyz).z() <= 0.0) {
        ++out.skipped_behind_camera;
        continue;
      }
      const double depth = (p.xyz - cam.center()).norm();
      out.observations.push_back({p.xyz, t.image_index, sphere_radius(depth, cam)});
    }
  }
  return out;
}

Aabb scene_bounds(const SparsePointCloud& cloud, double expand) {
  if (cloud.points.empty()) throw EmptyObservations("scene_bounds: empty point cloud");
  Vec3 lo = cloud.points.front().xyz;
  Vec3 hi = lo;
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p.xyz);
    hi = hi.cwiseMax(p.xyz);
  }
  const double edge = std::max((hi - lo).maxCoeff(), 1e-6) * (1.0 + expand);
  return Aabb::cube(0.5 * (lo + hi), edge);
}

// ---------------------------------------------------------------------------
// Images

void write_png(const std::string& path, const Image& image) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng init failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(image.width()) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const Vec3 c = image.at(x, y);
      for (int ch = 0; ch < 3; ++ch) {
        row[3 * x + ch] = static_cast<png_byte>(std::lround(std::clamp(c[ch], 0.0, 1.0) * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("read_png: cannot read " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("read_png: decode failed for " + path + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i] / 255.0f;
  return out;
}

void write_pfm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pfm: cannot open " + path);
  out << "PF\n" << image.width() << ' ' << image.height() << "\n-1.0\n";
  // PFM stores rows bottom to top.
  for (int y = image.height() - 1; y >= 0; --y) {
    const float* row = image.data().data() + 3 * static_cast<std::size_t>(y) * image.width();
    out.write(reinterpret_cast<const char*>(row), static_cast<std::streamsize>(3 * sizeof(float) * image.width()));
  }
}

// ---------------------------------------------------------------------------
// Cameras, trajectories, datasets

namespace {

json camera_to_json(const CameraModel& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"focal_length", c.focal_length},
          {"principal_point", {c.principal_point.x(), c.principal_point.y()}},
          {"rotation_wxyz", {c.rotation.w(), c.rotation.x(), c.rotation.y(), c.rotation.z()}},
          {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
          {"pixel_width", c.pixel_width},
          {"appearance_id", c.appearance_id}};
}

Vec3 vec3_of(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

CameraModel camera_from_json(const json& j) {
  CameraModel c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.focal_length = j.at("focal_length").get<double>();
  const auto& pp = j.at("principal_point");
  c.principal_point = Vec2(pp.at(0).get<double>(), pp.at(1).get<double>());
  const auto& q = j.at("rotation_wxyz");
  c.rotation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                  q.at(3).get<double>())
                   .normalized();
  c.translation = vec3_of(j.at("translation"));
  c.pixel_width = j.value("pixel_width", 1.0);
  c.appearance_id = j.value("appearance_id", kMeanAppearance);
  c.validate();
  return c;
}

// {"type": "zoom", "target": [..], "eye_start": [..], "eye_end": [..], "up": [..],
//  "frames": N, "width": W, "height": H, "fov_deg": F, "log_spacing": bool}
// {"type": "orbit", "center": [..], "radius": R, "elevation": Z, "up": [..], "frames": N, ...}
std::vector<CameraModel> parametric_trajectory(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  const int frames = j.at("frames").get<int>();
  const int width = j.at("width").get<int>();
  const int height = j.at("height").get<int>();
  const double fov = j.value("fov_deg", 60.0) * std::numbers::pi / 180.0;
  const double f = CameraModel::focal_for_fov(width, fov);
  const Vec3 up = j.contains("up") ? vec3_of(j.at("up")) : Vec3(0, 0, 1);
  if (frames < 1) throw std::invalid_argument("frames must be >= 1");
  std::vector<CameraModel> out;
  if (type == "zoom") {
    const Vec3 target = vec3_of(j.at("target"));
    const Vec3 a = vec3_of(j.at("eye_start"));
    const Vec3 b = vec3_of(j.at("eye_end"));
    const bool log_spacing = j.value("log_spacing", true);
    const double da = (a - target).norm();
    const double db = (b - target).norm();
    const Vec3 dir = (a - target).normalized();
    for (int i = 0; i < frames; ++i) {
      const double s = frames == 1 ? 0.0 : static_cast<double>(i) / (frames - 1);
      Vec3 eye;
      if (log_spacing && da > 0 && db > 0 && (b - target).normalized().isApprox(dir, 1e-9)) {
        eye = target + dir * da * std::pow(db / da, s);
      } else {
        eye = a + s * (b - a);
      }
      out.push_back(CameraModel::look_at(eye, target, up, f, width, height));
    }
  } else if (type == "orbit") {
    const Vec3 center = vec3_of(j.at("center"));
    const double radius = j.at("radius").get<double>();
    const double z = j.value("elevation", 0.0);
    for (int i = 0; i < frames; ++i) {
      const double a = 2.0 * std::numbers::pi * i / frames;
      const Vec3 eye = center + Vec3(radius * std::cos(a), radius * std::sin(a), z);
      out.push_back(CameraModel::look_at(eye, center, up, f, width, height));
    }
  } else {
    throw std::invalid_argument("unknown trajectory type '" + type + "'");
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string cameras_to_json(std::span<const CameraModel> cameras) {
  json arr = json::array();
  for (const auto& c : cameras) arr.push_back(camera_to_json(c));
  return arr.dump(2);
}

std::vector<CameraModel> cameras_from_json(const std::string& text, const std::string& source) {
  try {
    const json j = json::parse(text);
    const json& arr = j.is_object() && j.contains("cameras") ? j.at("cameras") : j;
    if (!arr.is_array()) throw std::invalid_argument("expected an array of cameras");
    std::vector<CameraModel> out;
    for (const auto& c : arr) out.push_back(camera_from_json(c));
    return out;
  } catch (const json::exception& e) {
    throw ParseError(source, 0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
}

std::vector<CameraModel> load_trajectory(const std::string& path) {
  const std::string text = read_text(path);
  std::vector<CameraModel> out;
  try {
    const json j = json::parse(text);
    if (j.is_object() && j.contains("type")) {
      out = parametric_trajectory(j);
    } else {
      out = cameras_from_json(text, path);
    }
  } catch (const json::exception& e) {
    throw ParseError(path, 0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(path, 0, e.what());
  }
  if (out.empty()) throw ParseError(path, 0, "trajectory has no cameras");
  return out;
}

void save_trajectory(const std::string& path, std::span<const CameraModel> cameras) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trajectory: cannot open " + path);
  out << cameras_to_json(cameras) << '\n';
}

void save_dataset(const std::string& dir, std::span<const CameraModel> cameras, std::span<const Image> images) {
  if (cameras.size() != images.size()) throw LengthMismatch("save_dataset: camera and image counts differ");
  fs::create_directories(dir);
  json arr = json::array();
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    std::ostringstream name;
    name << "image_" << std::setw(4) << std::setfill('0') << i << ".png";
    write_png((fs::path(dir) / name.str()).string(), images[i]);
    json c = camera_to_json(cameras[i]);
    c["image"] = name.str();
    arr.push_back(c);
  }
  std::ofstream out(fs::path(dir) / "dataset.json");
  out << json{{"cameras", arr}}.dump(2) << '\n';
}

std::pair<std::vector<CameraModel>, std::vector<Image>> load_dataset(const std::string& dir) {
  const std::string path = (fs::path(dir) / "dataset.json").string();
  const std::string text = read_text(path);
  std::vector<CameraModel> cams;
  std::vector<Image> images;
  try {
    const json j = json::parse(text);
    for (const auto& c : j.at("cameras")) {
      cams.push_back(camera_from_json(c));
      images.push_back(read_png((fs::path(dir) / c.at("image").get<std::string>()).string()));
      if (images.back().width() != cams.back().width || images.back().height() != cams.back().height) {
        throw std::invalid_argument("image size differs from its camera");
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(path, 0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(path, 0, e.what());
  }
  if (cams.empty()) throw ParseError(path, 0, "dataset has no images");
  return {std::move(cams), std::move(images)};
}

// ---------------------------------------------------------------------------
// Working-set CSV

void write_working_set_csv(const std::string& path, std::span<const WorkingSetReport> reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_working_set_csv: cannot open " + path);
  out << "frame_id,touched_node_count,touched_bytes,total_bytes,fraction\n" << std::setprecision(10);
  for (const auto& r : reports) {
    out << r.frame_id << ',' << r.touched_nodes.size() << ',' << r.touched_bytes << ',' << r.total_bytes << ','
        << r.fraction << '\n';
  }
}

std::vector<WorkingSetRow> read_working_set_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::string line;
  if (!std::getline(in, line) || line.rfind("frame_id,touched_node_count,touched_bytes,total_bytes,fraction", 0) != 0) {
    throw ParseError(path, 1, "missing or wrong header");
  }
  std::vector<WorkingSetRow> rows;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (is_blank(line)) continue;
    std::istringstream is(line);
    WorkingSetRow r;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(is >> r.frame_id >> c1 >> r.touched_node_count >> c2 >> r.touched_bytes >> c3 >> r.total_bytes >> c4 >>
          r.fraction) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw ParseError(path, number, "malformed row");
    }
    is >> std::ws;
    if (!is.eof()) throw ParseError(path, number, "trailing characters");
    if (r.fraction < 0.0 || r.fraction > 1.0) throw ParseError(path, number, "fraction outside [0, 1]");
    rows.push_back(r);
  }
  if (rows.empty()) throw ParseError(path, number, "no rows");
  return rows;
}

}  // namespace lodnerf
