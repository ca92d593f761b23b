#include "blursplat/blur.hpp"

#include <algorithm>
#include <stdexcept>

namespace blursplat {
namespace {

std::vector<Eigen::Vector3d> means_of(const GaussianCloud& cloud,
                                      GaussianTag tag) {
  std::vector<Eigen::Vector3d> means;
  means.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.tags[i] == tag) means.push_back(cloud.means[i]);
  }
  return means;
}

void check_fields(const GaussianCloud& canonical, const FieldPair& fields) {
  if (fields.static_field != nullptr &&
      fields.static_field->role != GaussianTag::kStatic) {
    throw std::invalid_argument("blur: static slot holds a non-static field");
  }
  if (fields.dynamic_field != nullptr &&
      fields.dynamic_field->role != GaussianTag::kDynamic) {
    throw std::invalid_argument("blur: dynamic slot holds a non-dynamic field");
  }
  (void)canonical;
}

// The scene as observed at one virtual timestamp. Offsets and records
// are filled only for present fields.
struct DeformedSample {
  GaussianCloud cloud;
  std::vector<DeformOffsets> static_offsets;
  std::vector<DeformOffsets> dynamic_offsets;
  DeformRecord static_record;
  DeformRecord dynamic_record;
};

DeformedSample deform_sample(const GaussianCloud& canonical,
                             const FieldPair& fields, double t,
                             bool keep_records) {
  DeformedSample s;
  s.cloud = canonical;
  if (fields.static_field != nullptr) {
    s.static_offsets =
        deform(*fields.static_field, means_of(canonical, GaussianTag::kStatic),
               t, keep_records ? &s.static_record : nullptr);
    apply_offsets(&s.cloud, GaussianTag::kStatic, s.static_offsets);
  }
  if (fields.dynamic_field != nullptr) {
    s.dynamic_offsets = deform(*fields.dynamic_field,
                               means_of(canonical, GaussianTag::kDynamic), t,
                               keep_records ? &s.dynamic_record : nullptr);
    apply_offsets(&s.cloud, GaussianTag::kDynamic, s.dynamic_offsets);
  }
  return s;
}

void accumulate(Image* sum, const Image& img) {
  for (std::size_t i = 0; i < sum->data.size(); ++i) {
    sum->data[i] += img.data[i];
  }
}

// Adds the per-tagged-Gaussian vectors into the cloud-indexed slots.
void scatter_by_tag(const GaussianCloud& cloud, GaussianTag tag,
                    const std::vector<Eigen::Vector3d>& packed,
                    std::vector<Eigen::Vector3d>* slots) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.tags[i] == tag) (*slots)[i] += packed[k++];
  }
}

}  // namespace

void ExposureWindow::validate() const {
  if (!(duration > 0.0)) {
    throw std::invalid_argument("ExposureWindow: duration must be positive");
  }
  if (segments < 1) {
    throw std::invalid_argument("ExposureWindow: need at least two samples");
  }
  if (!(center >= 0.0 && center <= 1.0)) {
    throw std::invalid_argument("ExposureWindow: center outside [0,1]");
  }
}

ExposureWindow ExposureWindow::clamped() const {
  validate();
  ExposureWindow w = *this;
  w.duration = std::min({duration, 2.0 * center, 2.0 * (1.0 - center)});
  if (!(w.duration > 0.0)) {
    throw std::invalid_argument(
        "ExposureWindow: window collapses at the sequence boundary");
  }
  return w;
}

std::vector<double> virtual_timestamps(const ExposureWindow& window) {
  const ExposureWindow w = window.clamped();
  std::vector<double> times(w.segments + 1);
  const double start = w.center - 0.5 * w.duration;
  const double step = w.duration / w.segments;
  for (int j = 0; j <= w.segments; ++j) {
    times[j] = start + j * step;
  }
  return times;
}

VirtualSampleSet make_sample_set(const Pose& base, const PoseDeltaPair& deltas,
                                 const ExposureWindow& window) {
  const ExposureWindow w = window.clamped();
  VirtualSampleSet set;
  set.poses = exposure_pose_sequence(base, deltas, w.segments);
  set.timestamps = virtual_timestamps(w);
  return set;
}

Image synth_blur_static(const Pose& p_start, const Pose& p_end, int n,
                        const GaussianCloud& static_gaussians,
                        const Camera& cam, const RenderOptions& opts) {
  if (static_gaussians.count_tag(GaussianTag::kDynamic) != 0) {
    throw std::invalid_argument(
        "synth_blur_static: input contains dynamic-tagged Gaussians");
  }
  const std::vector<Pose> poses = interpolate_pose_sequence(p_start, p_end, n);
  Image sum(cam.width, cam.height, 0.0);
  for (const Pose& pose : poses) {
    accumulate(&sum, render(static_gaussians, pose, cam, opts));
  }
  const double scale = 1.0 / static_cast<double>(poses.size());
  for (double& v : sum.data) v *= scale;
  return sum;
}

Image synth_blur_dynamic(const VirtualSampleSet& samples,
                         const GaussianCloud& canonical,
                         const FieldPair& fields, const Camera& cam,
                         const RenderOptions& opts) {
  if (samples.poses.size() != samples.timestamps.size()) {
    throw std::invalid_argument(
        "synth_blur_dynamic: pose/timestamp cardinality mismatch");
  }
  if (samples.poses.empty()) {
    throw std::invalid_argument("synth_blur_dynamic: empty sample set");
  }
  check_fields(canonical, fields);
  Image sum(cam.width, cam.height, 0.0);
  for (std::size_t j = 0; j < samples.poses.size(); ++j) {
    const DeformedSample s =
        deform_sample(canonical, fields, samples.timestamps[j], false);
    accumulate(&sum, render(s.cloud, samples.poses[j], cam, opts));
  }
  const double scale = 1.0 / static_cast<double>(samples.poses.size());
  for (double& v : sum.data) v *= scale;
  return sum;
}

void BlurGradients::init(const GaussianCloud& cloud, const FieldPair& fields) {
  scene.init(cloud.size());
  deltas = DeltaPairGrad{};
  static_field = DeformFieldGrad{};
  dynamic_field = DeformFieldGrad{};
  if (fields.static_field != nullptr) static_field.init(*fields.static_field);
  if (fields.dynamic_field != nullptr) {
    dynamic_field.init(*fields.dynamic_field);
  }
}

bool BlurGradients::finite() const {
  return scene.finite() && deltas.start.allFinite() &&
         deltas.end.allFinite() && static_field.finite() &&
         dynamic_field.finite();
}

std::vector<PoseGrad> blur_samples_backward(const VirtualSampleSet& samples,
                                            const GaussianCloud& canonical,
                                            const FieldPair& fields,
                                            const Camera& cam,
                                            const Image& upstream,
                                            const RenderOptions& opts,
                                            BlurGradients* grads) {
  check_fields(canonical, fields);
  if (grads == nullptr || grads->scene.size() != canonical.size()) {
    throw std::invalid_argument(
        "blur_samples_backward: gradients not initialized to the scene");
  }
  if ((fields.static_field != nullptr) != grads->static_field.sized() ||
      (fields.dynamic_field != nullptr) != grads->dynamic_field.sized()) {
    throw std::invalid_argument(
        "blur_samples_backward: field gradient slots do not match");
  }
  if (upstream.width != cam.width || upstream.height != cam.height) {
    throw std::invalid_argument("blur_samples_backward: upstream dims mismatch");
  }
  if (samples.poses.size() != samples.timestamps.size() ||
      samples.poses.empty()) {
    throw std::invalid_argument("blur_samples_backward: bad sample set");
  }
  const int count = static_cast<int>(samples.size());

  // The 1/(n+1) averaging weight is folded into the upstream image once;
  // every downstream chain inherits it linearly.
  Image upstream_scaled = upstream;
  const double scale = 1.0 / static_cast<double>(count);
  for (double& v : upstream_scaled.data) v *= scale;

  std::vector<PoseGrad> pose_grads(count);
  std::vector<Eigen::Vector3d> packed_means;
  for (int j = 0; j < count; ++j) {
    DeformedSample s =
        deform_sample(canonical, fields, samples.timestamps[j], true);
    RenderGradients rg;
    rg.init(canonical.size());
    render_with_grad(s.cloud, samples.poses[j], cam, upstream_scaled, opts,
                     &rg);
    pose_grads[j] = rg.d_pose;

    if (fields.static_field != nullptr) {
      const std::vector<DeformOffsets> up = offset_grads(
          canonical, GaussianTag::kStatic, s.static_offsets, &rg);
      packed_means.assign(s.static_record.means.size(),
                          Eigen::Vector3d::Zero());
      deform_backward(*fields.static_field, s.static_record, up,
                      &grads->static_field, &packed_means);
      scatter_by_tag(canonical, GaussianTag::kStatic, packed_means,
                     &rg.d_means);
    }
    if (fields.dynamic_field != nullptr) {
      const std::vector<DeformOffsets> up = offset_grads(
          canonical, GaussianTag::kDynamic, s.dynamic_offsets, &rg);
      packed_means.assign(s.dynamic_record.means.size(),
                          Eigen::Vector3d::Zero());
      deform_backward(*fields.dynamic_field, s.dynamic_record, up,
                      &grads->dynamic_field, &packed_means);
      scatter_by_tag(canonical, GaussianTag::kDynamic, packed_means,
                     &rg.d_means);
    }

    for (std::size_t i = 0; i < canonical.size(); ++i) {
      grads->scene.d_means[i] += rg.d_means[i];
      grads->scene.d_log_scales[i] += rg.d_log_scales[i];
      grads->scene.d_rotations[i] += rg.d_rotations[i];
      grads->scene.d_opacity_logits[i] += rg.d_opacity_logits[i];
      grads->scene.d_colors[i] += rg.d_colors[i];
    }
  }
  return pose_grads;
}

void synth_blur_dynamic_backward(const Pose& base, const PoseDeltaPair& deltas,
                                 const ExposureWindow& window,
                                 const GaussianCloud& canonical,
                                 const FieldPair& fields, const Camera& cam,
                                 const Image& upstream,
                                 const RenderOptions& opts,
                                 BlurGradients* grads) {
  const VirtualSampleSet samples = make_sample_set(base, deltas, window);
  const std::vector<PoseGrad> pose_grads = blur_samples_backward(
      samples, canonical, fields, cam, upstream, opts, grads);
  const DeltaPairGrad dg = exposure_pose_sequence_backward(
      base, deltas, window.clamped().segments, pose_grads);
  grads->deltas.start += dg.start;
  grads->deltas.end += dg.end;
}

}  // namespace blursplat
