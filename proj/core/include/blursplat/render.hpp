// Differentiable splatting renderer. Gaussians are projected, depth
// sorted, and alpha-composited front to back per pixel; gradients flow
// back to every Gaussian parameter and the camera pose.
//
// Determinism: compositing order is fixed by the depth sort (stable in
// storage order), rows are partitioned into fixed-size blocks
// independent of the thread count, and gradient partials are merged in
// block order, so identical inputs give bitwise-identical outputs for
// any --threads value.
#pragma once

#include <Eigen/Core>

#include "blursplat/camera.hpp"
#include "blursplat/gaussian.hpp"
#include "blursplat/image.hpp"
#include "blursplat/lie.hpp"
#include "blursplat/projection.hpp"

namespace blursplat {

struct RenderOptions {
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  // Blending stops once transmittance drops below this; config-exposed
  // because it perturbs gradients.
  double transmittance_floor = 1e-4;
  int threads = 1;
};

// Forward render. If depth_out is given it receives, per pixel, the
// view-space depth of the Gaussian with the largest blending weight
// (0 where nothing contributes).
Image render(const GaussianCloud& cloud, const Pose& pose, const Camera& cam,
             const RenderOptions& opts, DepthMap* depth_out = nullptr);

struct RenderGradients {
  std::vector<Eigen::Vector3d> d_means;
  std::vector<Eigen::Vector3d> d_log_scales;
  std::vector<Eigen::Vector4d> d_rotations;  // ambient quaternion (w,x,y,z)
  std::vector<double> d_opacity_logits;
  std::vector<Eigen::Vector3d> d_colors;
  PoseGrad d_pose;

  void init(std::size_t n);
  bool finite() const;
  std::size_t size() const { return d_means.size(); }
};

// Forward render plus gradients of sum(upstream * image) with respect
// to all Gaussian parameters and the pose tangent. Gradients ACCUMULATE
// into *grads (which must be init()ed to the cloud size); the returned
// image is bitwise-equal to render() with the same options.
Image render_with_grad(const GaussianCloud& cloud, const Pose& pose,
                       const Camera& cam, const Image& upstream,
                       const RenderOptions& opts, RenderGradients* grads);

}  // namespace blursplat
