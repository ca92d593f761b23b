#include "blursplat/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace blursplat {
namespace {

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

LossResult masked_l1(const Image& pred, const Image& target,
                     const Mask& mask) {
  require_same_shape(pred, target, "masked_l1");
  if (mask.width != pred.width || mask.height != pred.height) {
    throw std::invalid_argument("masked_l1: mask dims mismatch");
  }
  LossResult out;
  out.grad = Image(pred.width, pred.height, 0.0);
  for (int r = 0; r < pred.height; ++r) {
    for (int c = 0; c < pred.width; ++c) {
      if (mask.at(r, c) != 0) continue;
      const double* p = pred.px(r, c);
      const double* t = target.px(r, c);
      double* g = out.grad.px(r, c);
      for (int ch = 0; ch < 3; ++ch) {
        const double d = p[ch] - t[ch];
        out.value += std::abs(d);
        g[ch] = sign_of(d);
      }
    }
  }
  return out;
}

LossResult full_l1(const Image& pred, const Image& target) {
  return masked_l1(pred, target, Mask(pred.width, pred.height, 0));
}

bool TrackSet::consistent() const {
  if (positions.size() != valid.size()) return false;
  for (std::size_t f = 0; f < positions.size(); ++f) {
    if (positions[f].size() != point_count()) return false;
    if (valid[f].size() != point_count()) return false;
  }
  return true;
}

TrackLossResult track_loss(const std::vector<Eigen::Vector3d>& means,
                           const TrackSet& refs, int frame) {
  if (!refs.consistent()) {
    throw std::logic_error("track_loss: inconsistent track set");
  }
  if (frame < 0 || static_cast<std::size_t>(frame) >= refs.frame_count()) {
    throw std::invalid_argument("track_loss: frame out of range");
  }
  if (means.size() != refs.point_count()) {
    throw std::logic_error(
        "track_loss: correspondence broken (mean/track count mismatch)");
  }
  TrackLossResult out;
  out.d_means.assign(means.size(), Eigen::Vector3d::Zero());
  for (std::size_t g = 0; g < means.size(); ++g) {
    if (refs.valid[frame][g] == 0) continue;
    const Eigen::Vector3d& ref = refs.positions[frame][g];
    for (int j = 0; j < 3; ++j) {
      out.value += std::abs(ref[j] - means[g][j]);
      out.d_means[g][j] = sign_of(means[g][j] - ref[j]);
    }
  }
  return out;
}

TrackSet backproject_tracks(
    const std::vector<std::vector<Eigen::Vector2d>>& tracks2d,
    const std::vector<DepthMap>& depths, const std::vector<Pose>& poses,
    const Camera& cam) {
  if (tracks2d.size() != depths.size() || tracks2d.size() != poses.size()) {
    throw std::invalid_argument("backproject_tracks: per-frame size mismatch");
  }
  cam.validate();
  TrackSet set;
  set.positions.resize(tracks2d.size());
  set.valid.resize(tracks2d.size());
  for (std::size_t f = 0; f < tracks2d.size(); ++f) {
    const std::size_t count = tracks2d[f].size();
    set.positions[f].assign(count, Eigen::Vector3d::Zero());
    set.valid[f].assign(count, 0);
    const Pose inv = poses[f].inverse();
    for (std::size_t p = 0; p < count; ++p) {
      const Eigen::Vector2d& uv = tracks2d[f][p];
      const int c = static_cast<int>(std::lround(uv[0]));
      const int r = static_cast<int>(std::lround(uv[1]));
      if (r < 0 || r >= depths[f].height || c < 0 || c >= depths[f].width) {
        continue;
      }
      const double z = depths[f].at(r, c);
      if (!(z > 0.0)) continue;  // no coverage at this pixel
      set.positions[f][p] = inv.apply(cam.unproject(uv[0], uv[1], z));
      set.valid[f][p] = 1;
    }
  }
  return set;
}

}  // namespace blursplat
