#include "blursplat/gaussian.hpp"

#include <stdexcept>

namespace blursplat {

void GaussianCloud::remove_by_flags(const std::vector<std::uint8_t>& drop) {
  if (drop.size() != size())
    throw std::invalid_argument("remove_by_flags: flag count mismatch");
  std::size_t keep = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (drop[i]) continue;
    if (keep != i) {
      means[keep] = means[i];
      log_scales[keep] = log_scales[i];
      rotations[keep] = rotations[i];
      opacity_logits[keep] = opacity_logits[i];
      colors[keep] = colors[i];
      tags[keep] = tags[i];
    }
    ++keep;
  }
  means.resize(keep);
  log_scales.resize(keep);
  rotations.resize(keep);
  opacity_logits.resize(keep);
  colors.resize(keep);
  tags.resize(keep);
}

void GaussianCloud::append(const GaussianCloud& other) {
  means.insert(means.end(), other.means.begin(), other.means.end());
  log_scales.insert(log_scales.end(), other.log_scales.begin(),
                    other.log_scales.end());
  rotations.insert(rotations.end(), other.rotations.begin(),
                   other.rotations.end());
  opacity_logits.insert(opacity_logits.end(), other.opacity_logits.begin(),
                        other.opacity_logits.end());
  colors.insert(colors.end(), other.colors.begin(), other.colors.end());
  tags.insert(tags.end(), other.tags.begin(), other.tags.end());
}

std::size_t GaussianCloud::count_tag(GaussianTag tag) const {
  std::size_t n = 0;
  for (auto t : tags) n += t == tag;
  return n;
}

bool GaussianCloud::consistent() const {
  const std::size_t n = means.size();
  return log_scales.size() == n && rotations.size() == n &&
         opacity_logits.size() == n && colors.size() == n && tags.size() == n;
}

Eigen::Matrix3d covariance_from_params(const Eigen::Vector3d& scale,
                                       const Rotation& rotation) {
  const Eigen::Matrix3d r = rotation.matrix();
  return r * scale.array().square().matrix().asDiagonal() * r.transpose();
}

}  // namespace blursplat
