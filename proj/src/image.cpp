// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/image.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "lodnerf/errors.hpp"

namespace lodnerf {

Image::Image(int width, int height, const Vec3& fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("Image: negative size");
  data_.resize(3 * pixel_count());
  for (std::size_t i = 0; i < pixel_count(); ++i) {
    data_[3 * i] = static_cast<float>(fill.x());
    data_[3 * i + 1] = static_cast<float>(fill.y());
    data_[3 * i + 2] = static_cast<float>(fill.z());
  }
}

Image box_downsample(const Image& image) {
  const int w = image.width() / 2;
  const int h = image.height() / 2;
  if (w < 1 || h < 1) throw ImageTooSmall("box_downsample: image smaller than 2x2");
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec3 sum = image.at(2 * x, 2 * y) + image.at(2 * x + 1, 2 * y) + image.at(2 * x, 2 * y + 1) +
                       image.at(2 * x + 1, 2 * y + 1);
      out.set(x, y, 0.25 * sum);
    }
  }
  return out;
}

Image box_downsample(const Image& image, int levels) {
  Image out = image;
  for (int l = 0; l < levels; ++l) out = box_downsample(out);
  return out;
}

namespace {
void require_same_size(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw LengthMismatch("image sizes differ");
  if (a.empty()) throw LengthMismatch("empty image");
}
}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_size(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data().size());
}

double psnr_from_mse(double value) {
  if (value <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(value);
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

double mean_abs_delta(const Image& a, const Image& b) {
  require_same_size(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) sum += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
  return sum / static_cast<double>(a.data().size());
}

}  // namespace lodnerf
