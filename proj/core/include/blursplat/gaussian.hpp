// Anisotropic 3D Gaussian primitives, structure-of-arrays. Scales are
// stored as logs and opacities as logits so optimization is
// unconstrained; realized scale is always positive and realized opacity
// in (0,1).
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "blursplat/lie.hpp"

namespace blursplat {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

enum class GaussianTag : std::uint8_t { kStatic = 0, kDynamic = 1 };

struct GaussianCloud {
  std::vector<Eigen::Vector3d> means;
  std::vector<Eigen::Vector3d> log_scales;
  std::vector<Rotation> rotations;
  std::vector<double> opacity_logits;
  std::vector<Eigen::Vector3d> colors;  // linear RGB in [0,1], flat (no view dependence)
  std::vector<GaussianTag> tags;

  std::size_t size() const { return means.size(); }
  bool empty() const { return means.empty(); }

  void add(const Eigen::Vector3d& mean, const Eigen::Vector3d& log_scale,
           const Rotation& rotation, double opacity_logit,
           const Eigen::Vector3d& color, GaussianTag tag) {
    means.push_back(mean);
    log_scales.push_back(log_scale);
    rotations.push_back(rotation);
    opacity_logits.push_back(opacity_logit);
    colors.push_back(color);
    tags.push_back(tag);
  }

  void remove_by_flags(const std::vector<std::uint8_t>& drop);
  void append(const GaussianCloud& other);
  std::size_t count_tag(GaussianTag tag) const;
  bool consistent() const;
};

// Sigma = R diag(scale^2) R^T; scale is the realized (positive) scale.
Eigen::Matrix3d covariance_from_params(const Eigen::Vector3d& scale,
                                       const Rotation& rotation);

inline Eigen::Matrix3d covariance_of(const GaussianCloud& g, std::size_t i) {
  return covariance_from_params(g.log_scales[i].array().exp().matrix(),
                                g.rotations[i]);
}

}  // namespace blursplat
