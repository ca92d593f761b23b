// Training losses. All losses use sum reduction; learning rates are
// tuned for that scaling.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "blursplat/camera.hpp"
#include "blursplat/image.hpp"
#include "blursplat/lie.hpp"

namespace blursplat {

struct LossResult {
  double value = 0.0;
  Image grad;  // dL/dpred, same shape as the prediction
};

// L1 summed over pixels NOT flagged by the mask; the gradient is
// sign(pred - target) outside the mask and exactly zero inside.
LossResult masked_l1(const Image& pred, const Image& target, const Mask& mask);

// L1 over the whole image; identical to masked_l1 with an empty mask.
LossResult full_l1(const Image& pred, const Image& target);

// Reference 3D positions for dynamic Gaussians over frame times. Entry
// [frame][g] pairs one-to-one with the g-th dynamic Gaussian.
struct TrackSet {
  std::vector<std::vector<Eigen::Vector3d>> positions;
  std::vector<std::vector<std::uint8_t>> valid;

  std::size_t frame_count() const { return positions.size(); }
  std::size_t point_count() const {
    return positions.empty() ? 0 : positions.front().size();
  }
  bool consistent() const;
};

struct TrackLossResult {
  double value = 0.0;
  std::vector<Eigen::Vector3d> d_means;
};

// Sum of L1 distances between each dynamic mean and its reference at
// the given frame, skipping invalid references. A cardinality mismatch
// breaks the one-to-one correspondence and is a logic error.
TrackLossResult track_loss(const std::vector<Eigen::Vector3d>& means,
                           const TrackSet& refs, int frame);

// Lifts 2D pixel trajectories to world space: per frame, the pixel is
// unprojected at the depth-map value and mapped through the inverse
// pose. Entries are invalid where the depth map has no coverage.
// tracks2d is indexed [frame][point] with (u, v) pixel coordinates.
TrackSet backproject_tracks(
    const std::vector<std::vector<Eigen::Vector2d>>& tracks2d,
    const std::vector<DepthMap>& depths, const std::vector<Pose>& poses,
    const Camera& cam);

}  // namespace blursplat
