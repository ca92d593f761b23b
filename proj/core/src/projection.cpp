#include "blursplat/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace blursplat {

namespace {

// Projection Jacobian d(u,v)/d(view point) at the view-space mean.
Eigen::Matrix<double, 2, 3> proj_jacobian(const Eigen::Vector3d& m,
                                          const Camera& cam) {
  const double iz = 1.0 / m[2];
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx * iz, 0.0, -cam.fx * m[0] * iz * iz,
       0.0, cam.fy * iz, -cam.fy * m[1] * iz * iz;
  return J;
}

// d(R row-major entries)/d(quaternion component), unit-quaternion form.
void rotation_matrix_quat_jacobian(const Eigen::Quaterniond& q,
                                   Eigen::Matrix3d dR[4]) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  dR[0] << 0, -z, y,
           z, 0, -x,
           -y, x, 0;
  dR[1] << 0, y, z,
           y, -2 * x, -w,
           z, w, -2 * x;
  dR[2] << -2 * y, x, w,
           x, 0, z,
           -w, z, -2 * y;
  dR[3] << -2 * z, -w, x,
           w, -2 * z, y,
           x, y, 0;
  for (int i = 0; i < 4; ++i) dR[i] *= 2.0;
}

Eigen::Vector3d axial(const Eigen::Matrix3d& m) {
  return {m(1, 2) - m(2, 1), m(2, 0) - m(0, 2), m(0, 1) - m(1, 0)};
}

}  // namespace

std::optional<ProjectedGaussian> project_gaussian(
    const Eigen::Vector3d& mean, const Eigen::Vector3d& log_scale,
    const Rotation& rotation, double opacity_logit, const Pose& pose,
    const Camera& cam) {
  const Eigen::Vector3d m = pose.apply(mean);
  if (!(m[2] > kNearPlane)) return std::nullopt;

  ProjectedGaussian out;
  out.z = m[2];
  out.mean = cam.project(m);
  out.opacity = sigmoid(opacity_logit);

  const Eigen::Matrix3d sigma =
      covariance_from_params(log_scale.array().exp().matrix(), rotation);
  const Eigen::Matrix3d w = pose.rotation.matrix();
  const Eigen::Matrix<double, 2, 3> J = proj_jacobian(m, cam);
  Eigen::Matrix2d cov = J * (w * sigma * w.transpose()) * J.transpose();
  cov(0, 0) += kScreenDilation;
  cov(1, 1) += kScreenDilation;

  // 2x2 symmetric eigenvalues; the dilation keeps them positive, the
  // floor is a safety net against pathological inputs.
  const double tr2 = 0.5 * (cov(0, 0) + cov(1, 1));
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  const double disc = std::sqrt(std::max(0.0, tr2 * tr2 - det));
  const double lmax = std::max(tr2 + disc, kEigenvalueFloor);
  const double lmin = std::max(tr2 - disc, kEigenvalueFloor);

  out.cov = cov;
  out.radius = 3.0 * std::sqrt(lmax);
  const double safe_det = std::max(lmax * lmin, kEigenvalueFloor * kEigenvalueFloor);
  out.conic << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
  out.conic /= safe_det;

  if (out.mean[0] < -out.radius || out.mean[0] > cam.width - 1 + out.radius ||
      out.mean[1] < -out.radius || out.mean[1] > cam.height - 1 + out.radius)
    return std::nullopt;
  return out;
}

void project_gaussian_backward(const Eigen::Vector3d& mean,
                               const Eigen::Vector3d& log_scale,
                               const Rotation& rotation, const Pose& pose,
                               const Camera& cam, const ScreenGrad& up,
                               GaussianParamGrad* param_grad,
                               PoseGrad* pose_grad) {
  const Eigen::Vector3d m = pose.apply(mean);
  const Eigen::Vector3d scale = log_scale.array().exp().matrix();
  const Eigen::Matrix3d sigma = covariance_from_params(scale, rotation);
  const Eigen::Matrix3d w = pose.rotation.matrix();
  const Eigen::Matrix3d sigma_cam = w * sigma * w.transpose();
  const Eigen::Matrix<double, 2, 3> J = proj_jacobian(m, cam);

  const Eigen::Matrix2d g_cov = 0.5 * (up.d_cov + up.d_cov.transpose());

  // Screen mean path.
  const double iz = 1.0 / m[2];
  Eigen::Vector3d d_m;
  d_m[0] = up.d_u * cam.fx * iz;
  d_m[1] = up.d_v * cam.fy * iz;
  d_m[2] = -(up.d_u * cam.fx * m[0] + up.d_v * cam.fy * m[1]) * iz * iz;

  // Covariance path through J (J depends on the view mean).
  const Eigen::Matrix<double, 2, 3> dL_dJ = 2.0 * g_cov * J * sigma_cam;
  const double iz2 = iz * iz;
  d_m[0] += dL_dJ(0, 2) * (-cam.fx * iz2);
  d_m[1] += dL_dJ(1, 2) * (-cam.fy * iz2);
  d_m[2] += dL_dJ(0, 0) * (-cam.fx * iz2) + dL_dJ(1, 1) * (-cam.fy * iz2) +
            dL_dJ(0, 2) * (2.0 * cam.fx * m[0] * iz2 * iz) +
            dL_dJ(1, 2) * (2.0 * cam.fy * m[1] * iz2 * iz);

  // World-space gradients.
  const Eigen::Matrix3d d_sigma_cam = J.transpose() * g_cov * J;
  const Eigen::Matrix3d d_sigma = w.transpose() * d_sigma_cam * w;
  if (param_grad) {
    param_grad->d_mean += w.transpose() * d_m;

    // Sigma = R D R^T with D = diag(scale^2):
    // dL/dlog_s_k = 2 s_k^2 (R^T G R)_kk, dL/dR = 2 G R D.
    const Eigen::Matrix3d r = rotation.matrix();
    const Eigen::Matrix3d rtgr = r.transpose() * d_sigma * r;
    for (int k = 0; k < 3; ++k)
      param_grad->d_log_scale[k] +=
          2.0 * scale[k] * scale[k] * rtgr(k, k);

    const Eigen::Matrix3d dL_dR =
        2.0 * d_sigma * r * scale.array().square().matrix().asDiagonal();
    Eigen::Matrix3d dR[4];
    rotation_matrix_quat_jacobian(rotation.q, dR);
    Eigen::Vector4d d_q;
    for (int i = 0; i < 4; ++i) d_q[i] = (dL_dR.array() * dR[i].array()).sum();
    // Project out the radial component: the forward normalizes, so the
    // radial direction is flat.
    const Eigen::Vector4d qv(rotation.q.w(), rotation.q.x(), rotation.q.y(),
                             rotation.q.z());
    param_grad->d_rotation += d_q - qv.dot(d_q) * qv;
  }

  if (pose_grad) {
    pose_grad->t += d_m;
    // Mean path: R <- R exp(dw) gives dm = R (dw x mean).
    pose_grad->omega += mean.cross(w.transpose() * d_m);
    // Covariance path: d<B, Sigma_world-conjugated> under the same
    // perturbation reduces to the axial part of (Sigma B - B Sigma).
    pose_grad->omega += axial(sigma * d_sigma - d_sigma * sigma);
  }
}

std::vector<std::size_t> depth_sort(const std::vector<double>& depths) {
  std::vector<std::size_t> order(depths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return depths[a] < depths[b];
                   });
  return order;
}

}  // namespace blursplat
