#include "blursplat/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace blursplat {

namespace {



Eigen::Quaterniond canonicalize(Eigen::Quaterniond q) {
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

// Raw quaternion exponential, no canonicalization: the backward chain
// needs the algebraic (sign-preserving) form.
Eigen::Quaterniond expq_raw(const Eigen::Vector3d& phi) {
  const double theta = phi.norm();
  double k;  // sin(theta/2)/theta
  if (theta < 1e-8) {
    k = 0.5 - theta * theta / 48.0;
  } else {
    k = std::sin(0.5 * theta) / theta;
  }
  return {std::cos(0.5 * theta), k * phi[0], k * phi[1], k * phi[2]};
}

// Minimal-angle log of a unit quaternion with w >= 0.
Eigen::Vector3d logq_raw(const Eigen::Quaterniond& q) {
  const Eigen::Vector3d v = q.vec();
  const double m = v.norm();
  const double w = q.w();
  if (m < 1e-12) {
    if (w > 0.0) return 2.0 * v;  // angle ~ 0
    // w ~ -1 cannot occur after canonicalization; near-pi handled below.
    return 2.0 * v;
  }
  const double angle = 2.0 * std::atan2(m, w);
  return (angle / m) * v;
}

}  // namespace

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& in) {
  const double n = in.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6)
    throw std::invalid_argument("rotation quaternion is not unit length");
  Rotation r;
  r.q = canonicalize(in.normalized());
  return r;
}

Rotation Rotation::from_quaternion_lenient(const Eigen::Quaterniond& in) {
  const double n = in.norm();
  if (!(n > 0.0) || !std::isfinite(n))
    throw std::invalid_argument("rotation quaternion has zero or non-finite norm");
  Rotation r;
  r.q = canonicalize(in.normalized());
  return r;
}

Rotation Rotation::inverse() const {
  Rotation r;
  r.q = canonicalize(q.conjugate());
  return r;
}

Rotation Rotation::operator*(const Rotation& o) const {
  // Unit factors keep the product unit to machine precision; skipping
  // renormalization keeps identity composition bit-exact. Optimizer
  // steps renormalize through from_quaternion_lenient.
  Rotation r;
  r.q = canonicalize(q * o.q);
  return r;
}

double Rotation::angle_to(const Rotation& o) const {
  // atan2 form stays well-conditioned near zero where acos(dot) loses
  // half the significant digits.
  const Eigen::Quaterniond d = q.conjugate() * o.q;
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

Rotation so3_exp(const Eigen::Vector3d& omega) {
  if (!omega.allFinite())
    throw std::invalid_argument("so3_exp: non-finite input");
  Rotation r;
  r.q = canonicalize(expq_raw(omega));
  return r;
}

Eigen::Vector3d so3_log(const Rotation& r) {
  const Eigen::Quaterniond q = canonicalize(r.q);
  const Eigen::Vector3d v = q.vec();
  const double m = v.norm();
  if (q.w() < 1e-9 && m > 0.0) {
    // Angle is pi (or within noise of it): axis sign is ambiguous.
    // Deterministic rule: lexicographically largest nonzero component
    // of the axis is made positive.
    Eigen::Vector3d axis = v / m;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
    const double angle = 2.0 * std::atan2(m, std::max(q.w(), 0.0));
    return angle * axis;
  }
  return logq_raw(q);
}

Rotation interpolate_rotation(const Rotation& r_start, const Rotation& r_end,
                              double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("interpolate_rotation: fraction outside [0,1]");
  if (fraction == 0.0) return r_start;
  if (fraction == 1.0) return r_end;
  const Eigen::Vector3d phi = so3_log(r_start.inverse() * r_end);
  return r_start * so3_exp(fraction * phi);
}

Pose Pose::inverse() const {
  Pose p;
  p.rotation = rotation.inverse();
  p.translation = -p.rotation.apply(translation);
  return p;
}

Pose Pose::operator*(const Pose& o) const {
  Pose p;
  p.rotation = rotation * o.rotation;
  p.translation = rotation.apply(o.translation) + translation;
  return p;
}

Pose midpoint_pose(const Pose& p_start, const Pose& p_end) {
  Pose p;
  p.rotation = interpolate_rotation(p_start.rotation, p_end.rotation, 0.5);
  p.translation = 0.5 * (p_start.translation + p_end.translation);
  return p;
}

Pose apply_delta(const Pose& initial, const Pose& delta) {
  return initial * delta;
}

std::vector<Pose> interpolate_pose_sequence(const Pose& p_start,
                                            const Pose& p_end, int n) {
  if (n < 1)
    throw std::invalid_argument("interpolate_pose_sequence: n must be >= 1");
  std::vector<Pose> out(static_cast<std::size_t>(n) + 1);
  out[0] = p_start;
  out[static_cast<std::size_t>(n)] = p_end;
  const Eigen::Vector3d phi =
      so3_log(p_start.rotation.inverse() * p_end.rotation);
  for (int j = 1; j < n; ++j) {
    const double f = static_cast<double>(j) / n;
    Pose p;
    p.rotation = p_start.rotation * so3_exp(f * phi);
    p.translation =
        (1.0 - f) * p_start.translation + f * p_end.translation;
    out[static_cast<std::size_t>(j)] = p;
  }
  return out;
}

Pose delta_to_pose(const Vector6d& tangent) {
  Pose p;
  p.rotation = so3_exp(tangent.head<3>());
  p.translation = tangent.tail<3>();
  return p;
}

Pose PoseDeltaPair::delta_start() const { return delta_to_pose(start); }
Pose PoseDeltaPair::delta_end() const { return delta_to_pose(end); }

std::vector<Pose> exposure_pose_sequence(const Pose& base,
                                         const PoseDeltaPair& deltas, int n) {
  return interpolate_pose_sequence(apply_delta(base, deltas.delta_start()),
                                   apply_delta(base, deltas.delta_end()), n);
}

Eigen::Matrix4d quat_left(const Eigen::Quaterniond& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x,  w, -z,  y,
       y,  z,  w, -x,
       z, -y,  x,  w;
  return m;
}

Eigen::Matrix4d quat_right(const Eigen::Quaterniond& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x,  w,  z, -y,
       y, -z,  w,  x,
       z,  y, -x,  w;
  return m;
}

Eigen::Matrix<double, 4, 3> dexpq(const Eigen::Vector3d& phi) {
  const double theta = phi.norm();
  double k;        // sin(theta/2)/theta
  double kp_over;  // k'(theta)/theta
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    k = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
    kp_over = -1.0 / 24.0 + t2 / 960.0;
  } else {
    const double s = std::sin(0.5 * theta), c = std::cos(0.5 * theta);
    k = s / theta;
    kp_over = (0.5 * c / theta - s / (theta * theta)) / theta;
  }
  Eigen::Matrix<double, 4, 3> d;
  d.row(0) = -0.5 * k * phi.transpose();
  d.bottomRows<3>() =
      k * Eigen::Matrix3d::Identity() + kp_over * (phi * phi.transpose());
  return d;
}

Eigen::Matrix<double, 3, 4> dlogq(const Eigen::Quaterniond& q) {
  const Eigen::Vector3d v = q.vec();
  const double m = v.norm();
  const double w = q.w();
  Eigen::Matrix<double, 3, 4> d;
  if (m < 1e-6) {
    // logq ~ 2 v (1 + m^2 (...) ), leading order.
    d.col(0) = -2.0 * v;
    d.rightCols<3>() = 2.0 * Eigen::Matrix3d::Identity() -
                       (4.0 / 3.0) * (v * v.transpose());
    return d;
  }
  const double alpha = std::atan2(m, w);  // half angle
  d.col(0) = -2.0 * v;                    // uses m^2 + w^2 = 1
  d.rightCols<3>() = (2.0 * alpha / m) * Eigen::Matrix3d::Identity() +
                     (2.0 * (w * m - alpha) / (m * m * m)) *
                         (v * v.transpose());
  return d;
}

DeltaPairGrad exposure_pose_sequence_backward(
    const Pose& base, const PoseDeltaPair& deltas, int n,
    const std::vector<PoseGrad>& pose_grads) {
  if (n < 1)
    throw std::invalid_argument("exposure_pose_sequence_backward: n must be >= 1");
  if (pose_grads.size() != static_cast<std::size_t>(n) + 1)
    throw std::invalid_argument(
        "exposure_pose_sequence_backward: need n+1 pose gradients");

  // Recompute the forward chain in raw (sign-preserving) quaternion
  // arithmetic. Sign flips cancel: the loss is even in q, so ambient
  // gradients flip with q and tangent conversions are sign-invariant.
  const Eigen::Quaterniond qb = base.rotation.q;
  const Eigen::Quaterniond e0 = expq_raw(deltas.start.head<3>());
  const Eigen::Quaterniond en = expq_raw(deltas.end.head<3>());
  const Eigen::Quaterniond q0 = qb * e0;
  const Eigen::Quaterniond qn = qb * en;

  // Relative rotation, canonicalized for the minimal-angle log branch;
  // the sign enters the chain as a factor on d a / d q.
  Eigen::Quaterniond a = q0.conjugate() * qn;
  double sign = 1.0;
  if (a.w() < 0.0) {
    a.coeffs() = -a.coeffs();
    sign = -1.0;
  }
  const Eigen::Vector3d phi = logq_raw(a);

  // Translation chain: t_j = (1-f) t0 + f tn, t0 = R_base u0 + t_base.
  Eigen::Vector3d g_t0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d g_tn = Eigen::Vector3d::Zero();

  // Rotation chain accumulators (ambient 4-vector gradients).
  Eigen::Vector4d g_q0 = Eigen::Vector4d::Zero();
  Eigen::Vector4d g_qn = Eigen::Vector4d::Zero();
  Eigen::Vector3d g_phi = Eigen::Vector3d::Zero();

  const Eigen::Matrix4d L_q0 = quat_left(q0);
  for (int j = 0; j <= n; ++j) {
    const double f = static_cast<double>(j) / n;
    const PoseGrad& g = pose_grads[static_cast<std::size_t>(j)];

    g_t0 += (1.0 - f) * g.t;
    g_tn += f * g.t;

    // q_j = q0 * expq(f phi); tangent gradient to ambient: A = 2 L(q_j) (0, g).
    const Eigen::Quaterniond ef = expq_raw(f * phi);
    const Eigen::Quaterniond qj = q0 * ef;
    Eigen::Vector4d A =
        2.0 * (quat_left(qj) * Eigen::Vector4d(0, g.omega[0], g.omega[1],
                                               g.omega[2]));
    g_q0 += quat_right(ef).transpose() * A;
    g_phi += f * (dexpq(f * phi).transpose() * (L_q0.transpose() * A));
  }

  // phi -> a -> (q0, qn). a_raw = conj(q0) * qn, canonicalized by `sign`.
  const Eigen::Vector4d g_a = sign * (dlogq(a).transpose() * g_phi);
  const Eigen::Vector4d C(1.0, -1.0, -1.0, -1.0);
  // d a / d q0 = QR(qn) C (conjugation as diagonal sign matrix).
  g_q0 += C.asDiagonal() * (quat_right(qn).transpose() * g_a);
  g_qn += quat_left(q0.conjugate()).transpose() * g_a;

  // q0 = q_base * expq(omega0): d q0 / d omega0 = QL(q_base) Dexpq(omega0).
  DeltaPairGrad out;
  out.start.head<3>() =
      dexpq(deltas.start.head<3>()).transpose() *
      (quat_left(qb).transpose() * g_q0);
  out.end.head<3>() = dexpq(deltas.end.head<3>()).transpose() *
                      (quat_left(qb).transpose() * g_qn);
  const Eigen::Matrix3d Rb = base.rotation.matrix();
  out.start.tail<3>() = Rb.transpose() * g_t0;
  out.end.tail<3>() = Rb.transpose() * g_tn;
  return out;
}

void pose_to_array(const Pose& p, double out[7]) {
  out[0] = p.rotation.q.w();
  out[1] = p.rotation.q.x();
  out[2] = p.rotation.q.y();
  out[3] = p.rotation.q.z();
  out[4] = p.translation[0];
  out[5] = p.translation[1];
  out[6] = p.translation[2];
}

Pose pose_from_array(const double in[7]) {
  Pose p;
  p.rotation = Rotation::from_quaternion_lenient(
      Eigen::Quaterniond(in[0], in[1], in[2], in[3]));
  p.translation = {in[4], in[5], in[6]};
  return p;
}

}  // namespace blursplat
