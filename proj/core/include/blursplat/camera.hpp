// Pinhole camera, no distortion. Pixel (row r, col c) has screen
// coordinates (u, v) = (c, r); view space is right-handed with +z
// forward, so a point at depth z projects to u = fx x/z + cx.
#pragma once

#include <Eigen/Core>
#include <stdexcept>

namespace blursplat {

struct Camera {
  double fx = 0.0, fy = 0.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0))
      throw std::invalid_argument("camera: focal lengths must be positive");
    if (!(width > 0 && height > 0))
      throw std::invalid_argument("camera: resolution must be positive");
    if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height))
      throw std::invalid_argument("camera: principal point outside image");
  }

  // View-space point (z > 0) to screen (u, v).
  Eigen::Vector2d project(const Eigen::Vector3d& p) const {
    return {fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy};
  }

  // Screen (u, v) at view depth z back to a view-space point.
  Eigen::Vector3d unproject(double u, double v, double z) const {
    return {(u - cx) / fx * z, (v - cy) / fy * z, z};
  }
};

inline constexpr double kNearPlane = 0.01;

}  // namespace blursplat
