// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "lodnerf/geometry.hpp"

namespace lodnerf {

/// Linear RGB image, row-major, channels interleaved.
class Image {
 public:
  Image() = default;
  Image(int width, int height, const Vec3& fill = Vec3::Zero());

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return pixel_count() == 0; }

  Vec3 at(int x, int y) const {
    const float* p = &data_[index(x, y)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, const Vec3& rgb) {
    float* p = &data_[index(x, y)];
    p[0] = static_cast<float>(rgb.x());
    p[1] = static_cast<float>(rgb.y());
    p[2] = static_cast<float>(rgb.z());
  }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y) const { return 3 * (static_cast<std::size_t>(y) * width_ + x); }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// 2x box filter; odd trailing rows/columns are dropped.
Image box_downsample(const Image& image);
/// `levels` successive box_downsample passes.
Image box_downsample(const Image& image, int levels);

/// Mean squared error over pixels and channels. Throws LengthMismatch.
double mse(const Image& a, const Image& b);
/// PSNR for unit peak; +inf for identical images.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);
/// Mean over pixels and channels of |a - b|. Throws LengthMismatch.
double mean_abs_delta(const Image& a, const Image& b);

}  // namespace lodnerf
