// Blur synthesis: a blurry observation is reconstructed as the pixel
// mean of n+1 sharp renders taken along an interpolated pose sequence,
// with the scene optionally deformed per virtual timestamp.
//
// Camera-only blur renders one fixed scene from the moving poses;
// joint camera+object blur additionally evaluates the deformation
// fields at each virtual timestamp. Averaging keeps pixels in [0,1].
#pragma once

#include <vector>

#include "blursplat/camera.hpp"
#include "blursplat/deform.hpp"
#include "blursplat/gaussian.hpp"
#include "blursplat/image.hpp"
#include "blursplat/lie.hpp"
#include "blursplat/render.hpp"

namespace blursplat {

// One exposure: centered at `center` in normalized [0,1] sequence time,
// `duration` long, discretized by `segments`+1 virtual samples.
struct ExposureWindow {
  double center = 0.5;
  double duration = 0.1;
  int segments = 9;

  // Throws invalid_argument unless duration > 0, segments >= 1 and
  // center lies inside [0,1].
  void validate() const;

  // Shrinks the duration symmetrically so the window stays inside
  // [0,1]; the center never moves. Throws if the clamp collapses the
  // window to zero length.
  ExposureWindow clamped() const;
};

// Uniform grid center - d/2 + j*d/segments for j = 0..segments, after
// clamping. The grid mean equals the window center.
std::vector<double> virtual_timestamps(const ExposureWindow& window);

struct VirtualSampleSet {
  std::vector<Pose> poses;
  std::vector<double> timestamps;

  std::size_t size() const { return poses.size(); }
};

// Poses from the delta-corrected exposure endpoints, timestamps from
// the clamped window grid; cardinalities always match.
VirtualSampleSet make_sample_set(const Pose& base, const PoseDeltaPair& deltas,
                                 const ExposureWindow& window);

// Camera-only blur: mean of n+1 renders of one static scene along the
// pose sequence from p_start to p_end. Rejects dynamic-tagged input.
Image synth_blur_static(const Pose& p_start, const Pose& p_end, int n,
                        const GaussianCloud& static_gaussians,
                        const Camera& cam, const RenderOptions& opts);

// Deformation fields applied per virtual timestamp. Either entry may be
// null (that tag is then rendered undeformed); a non-null field must
// carry the matching role.
struct FieldPair {
  const DeformField* static_field = nullptr;
  const DeformField* dynamic_field = nullptr;
};

// Joint camera+object blur: mean over the sample set of renders of the
// per-timestamp deformed scene. Renders are streamed; only the running
// sum is held.
Image synth_blur_dynamic(const VirtualSampleSet& samples,
                         const GaussianCloud& canonical,
                         const FieldPair& fields, const Camera& cam,
                         const RenderOptions& opts);

struct BlurGradients {
  RenderGradients scene;  // canonical Gaussian parameters; d_pose unused
  DeltaPairGrad deltas;
  DeformFieldGrad static_field;   // sized only when that field is present
  DeformFieldGrad dynamic_field;  // sized only when that field is present

  void init(const GaussianCloud& cloud, const FieldPair& fields);
  bool finite() const;
};

// Backward over an explicit sample set: accumulates canonical-parameter
// and field gradients into *grads and returns the per-sample pose
// gradients for the caller to chain into its pose parameterization
// (grads->deltas is left untouched). Per-sample forwards are recomputed
// rather than stored.
std::vector<PoseGrad> blur_samples_backward(const VirtualSampleSet& samples,
                                            const GaussianCloud& canonical,
                                            const FieldPair& fields,
                                            const Camera& cam,
                                            const Image& upstream,
                                            const RenderOptions& opts,
                                            BlurGradients* grads);

// Gradients of sum(upstream * blur) with respect to the pose delta
// tangents, the canonical Gaussian parameters and the field weights.
// Per-sample forwards are recomputed rather than stored. Gradients
// ACCUMULATE into *grads, which must be init()ed to match.
void synth_blur_dynamic_backward(const Pose& base, const PoseDeltaPair& deltas,
                                 const ExposureWindow& window,
                                 const GaussianCloud& canonical,
                                 const FieldPair& fields, const Camera& cam,
                                 const Image& upstream,
                                 const RenderOptions& opts,
                                 BlurGradients* grads);

}  // namespace blursplat
