// Perspective projection of 3D Gaussians to screen space via the EWA
// local-affine approximation, with analytic gradients back to Gaussian
// parameters and the camera pose.
#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "blursplat/camera.hpp"
#include "blursplat/gaussian.hpp"
#include "blursplat/lie.hpp"

namespace blursplat {

// Added to both diagonal entries of every screen covariance (the usual
// splatting dilation); keeps eigenvalues well above the 1e-6 floor.
inline constexpr double kScreenDilation = 0.3;
inline constexpr double kEigenvalueFloor = 1e-6;

struct ProjectedGaussian {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();  // (u, v) pixels
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();   // screen covariance
  Eigen::Matrix2d conic = Eigen::Matrix2d::Zero(); // cov^{-1}
  double z = 0.0;        // view-space depth
  double opacity = 0.0;  // sigmoid of the stored logit
  double radius = 0.0;   // 3 sigma of the major axis, pixels
};

// Returns nullopt when the Gaussian is culled: view depth <= near plane,
// or the screen mean lies farther than 3 sigma outside the image.
std::optional<ProjectedGaussian> project_gaussian(
    const Eigen::Vector3d& mean, const Eigen::Vector3d& log_scale,
    const Rotation& rotation, double opacity_logit, const Pose& pose,
    const Camera& cam);

// Upstream gradient with respect to the screen-space outputs.
struct ScreenGrad {
  double d_u = 0.0, d_v = 0.0;
  Eigen::Matrix2d d_cov = Eigen::Matrix2d::Zero();  // treated as symmetric
};

// Accumulated gradient for one Gaussian's parameters.
struct GaussianParamGrad {
  Eigen::Vector3d d_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_log_scale = Eigen::Vector3d::Zero();
  // Ambient quaternion gradient (w,x,y,z) with the radial component
  // projected out; the optimizer renormalizes after each step.
  Eigen::Vector4d d_rotation = Eigen::Vector4d::Zero();
  double d_opacity_logit = 0.0;
  Eigen::Vector3d d_color = Eigen::Vector3d::Zero();

  GaussianParamGrad& operator+=(const GaussianParamGrad& o) {
    d_mean += o.d_mean;
    d_log_scale += o.d_log_scale;
    d_rotation += o.d_rotation;
    d_opacity_logit += o.d_opacity_logit;
    d_color += o.d_color;
    return *this;
  }
};

// Chains a screen-space gradient back to world parameters and the pose.
// Adds into *param_grad (mean, log_scale, rotation) and *pose_grad;
// opacity and color chains live in the rasterizer.
void project_gaussian_backward(const Eigen::Vector3d& mean,
                               const Eigen::Vector3d& log_scale,
                               const Rotation& rotation, const Pose& pose,
                               const Camera& cam, const ScreenGrad& up,
                               GaussianParamGrad* param_grad,
                               PoseGrad* pose_grad);

// Indices of the entries sorted by ascending view depth; ties keep input
// order.
std::vector<std::size_t> depth_sort(const std::vector<double>& depths);

}  // namespace blursplat
