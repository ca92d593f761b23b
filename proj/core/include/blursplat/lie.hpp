// SO(3)/rigid-pose algebra: quaternion exp/log maps, endpoint-delta
// application, and intra-exposure pose interpolation with an exact
// analytic backward pass.
//
// Conventions:
//  - Quaternions are Hamilton (w, x, y, z), unit norm, canonicalized to
//    w >= 0 on construction.
//  - Pose maps world points to camera space: apply(x) = R x + t.
//  - Pose gradients are 6-vectors (g_omega, g_t) in the right-tangent
//    convention: dL = g_omega . dw + g_t . dt under the perturbation
//    R <- R exp(dw), t <- t + dt.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <vector>

namespace blursplat {

using Vector6d = Eigen::Matrix<double, 6, 1>;

struct Rotation {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};  // unit, w >= 0

  Rotation() = default;

  // Normalizes and canonicalizes. Throws std::invalid_argument if the
  // input norm deviates from 1 by more than 1e-6 or is non-finite.
  static Rotation from_quaternion(const Eigen::Quaterniond& in);

  // Renormalizes without the norm check; for optimizer steps.
  static Rotation from_quaternion_lenient(const Eigen::Quaterniond& in);

  Eigen::Matrix3d matrix() const { return q.toRotationMatrix(); }
  Eigen::Vector3d apply(const Eigen::Vector3d& v) const { return q * v; }
  Rotation inverse() const;
  Rotation operator*(const Rotation& o) const;

  // Geodesic distance in radians, in [0, pi].
  double angle_to(const Rotation& o) const;
};

// Axis-angle exponential; Taylor fallback below 1e-8 radians.
Rotation so3_exp(const Eigen::Vector3d& omega);

// Minimal axis-angle, norm <= pi. The pi-rotation sign ambiguity is
// resolved by making the lexicographically largest nonzero axis
// component positive.
Eigen::Vector3d so3_log(const Rotation& r);

// r_start * exp(fraction * log(r_start^-1 * r_end)). fraction outside
// [0,1] throws std::invalid_argument.
Rotation interpolate_rotation(const Rotation& r_start, const Rotation& r_end,
                              double fraction);

struct Pose {
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return rotation.apply(x) + translation;
  }
  Pose inverse() const;
  // (a * b).apply(x) == a.apply(b.apply(x))
  Pose operator*(const Pose& o) const;
};

Pose midpoint_pose(const Pose& p_start, const Pose& p_end);

// Right-composition initial ∘ delta.
Pose apply_delta(const Pose& initial, const Pose& delta);

// n+1 poses; element j interpolates rotation geodesically at j/n and
// translation linearly. n = 0 throws std::invalid_argument.
std::vector<Pose> interpolate_pose_sequence(const Pose& p_start,
                                            const Pose& p_end, int n);

// Learnable exposure-endpoint corrections, parameterized in the tangent
// space as (omega, u); the pose delta is (exp(omega), u), so identity
// at zero. Both start at zero before optimization.
struct PoseDeltaPair {
  Vector6d start = Vector6d::Zero();
  Vector6d end = Vector6d::Zero();

  Pose delta_start() const;
  Pose delta_end() const;
};

Pose delta_to_pose(const Vector6d& tangent);

// Endpoint poses base·delta_start, base·delta_end, then the n+1
// interpolated poses between them.
std::vector<Pose> exposure_pose_sequence(const Pose& base,
                                         const PoseDeltaPair& deltas, int n);

// Gradient of a scalar with respect to one pose (see header comment for
// the tangent convention).
struct PoseGrad {
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  PoseGrad& operator+=(const PoseGrad& o) {
    omega += o.omega;
    t += o.t;
    return *this;
  }
};

struct DeltaPairGrad {
  Vector6d start = Vector6d::Zero();
  Vector6d end = Vector6d::Zero();
};

// Exact chain rule from per-pose gradients of exposure_pose_sequence
// back to the delta tangent parameters. pose_grads must have n+1
// entries matching the forward sequence.
DeltaPairGrad exposure_pose_sequence_backward(
    const Pose& base, const PoseDeltaPair& deltas, int n,
    const std::vector<PoseGrad>& pose_grads);

// --- Quaternion calculus used by the backward pass (exposed for tests).

// Left/right multiplication matrices: quat_mul(a, b) = QL(a) b = QR(b) a,
// on coefficient order (w, x, y, z).
Eigen::Matrix4d quat_left(const Eigen::Quaterniond& q);
Eigen::Matrix4d quat_right(const Eigen::Quaterniond& q);

// d expq(phi) / d phi, 4x3, rows ordered (w, x, y, z).
Eigen::Matrix<double, 4, 3> dexpq(const Eigen::Vector3d& phi);

// d logq(q) / d q, 3x4, for unit q with w >= 0 (angle < pi).
Eigen::Matrix<double, 3, 4> dlogq(const Eigen::Quaterniond& q);

// Serialization order used in checkpoints: qw qx qy qz tx ty tz.
void pose_to_array(const Pose& p, double out[7]);
Pose pose_from_array(const double in[7]);

}  // namespace blursplat
