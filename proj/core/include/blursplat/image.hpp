// Dense image buffers. Images are linear RGB, row-major, interleaved
// channels; pixel (row r, col c) has screen coordinates (u, v) = (c, r).
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace blursplat {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // height*width*3

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  double* px(int r, int c) {
    return data.data() + (static_cast<std::size_t>(r) * width + c) * 3;
  }
  const double* px(int r, int c) const {
    return data.data() + (static_cast<std::size_t>(r) * width + c) * 3;
  }
  Eigen::Vector3d rgb(int r, int c) const {
    const double* p = px(r, c);
    return {p[0], p[1], p[2]};
  }
  void set_rgb(int r, int c, const Eigen::Vector3d& v) {
    double* p = px(r, c);
    p[0] = v[0];
    p[1] = v[1];
    p[2] = v[2];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height;
  }
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // nonzero = flagged pixel

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  void set(int r, int c, std::uint8_t v) {
    data[static_cast<std::size_t>(r) * width + c] = v;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
  }
  bool same_shape(const Image& img) const {
    return width == img.width && height == img.height;
  }
};

// Per-pixel view-space depth of the dominant Gaussian; 0 marks background /
// no coverage.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0) {}

  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  void set(int r, int c, double v) {
    data[static_cast<std::size_t>(r) * width + c] = v;
  }
};

inline void require_same_shape(const Image& a, const Image& b,
                               const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": image dims mismatch");
}

// Binary dilation with a square structuring element of the given radius.
Mask dilate(const Mask& m, int radius);

}  // namespace blursplat
