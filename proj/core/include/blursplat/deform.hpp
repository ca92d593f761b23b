// Time-conditioned deformation field for Gaussian parameters.
//
// An MLP maps the positional encoding of a canonical mean and a timestamp
// to offsets (dx, dr, ds). dx shifts the mean, ds shifts the log-scale,
// and dr is a quaternion increment composed onto the rotation as
// q * normalize((1,0,0,0) + dr). The output layer is zero-initialized,
// so a freshly created field is exactly the identity deformation.
//
// Backward is hand-written reverse mode over activations recorded during
// the forward call. Calling deform_backward with a record that was never
// filled in, or deform on a field with no layers, is a logic error.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "blursplat/gaussian.hpp"
#include "blursplat/render.hpp"

namespace blursplat {

struct DeformOffsets {
  Eigen::Vector3d dx = Eigen::Vector3d::Zero();
  Eigen::Vector4d dr = Eigen::Vector4d::Zero();  // (w, x, y, z) increment
  Eigen::Vector3d ds = Eigen::Vector3d::Zero();
};

struct DeformField {
  GaussianTag role = GaussianTag::kStatic;
  int l_x = 10;  // frequency bands for the mean encoding
  int l_t = 6;   // frequency bands for the timestamp encoding
  // weights[i] is (out x in); the last entry is the output layer. Hidden
  // layers use ReLU, the output layer is linear.
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  // Hidden layers drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with the
  // given seed; biases and the whole output layer start at zero.
  static DeformField create(GaussianTag role, int depth, int width, int l_x,
                            int l_t, std::uint64_t seed);

  bool initialized() const { return !weights.empty(); }
  int input_dim() const { return 3 * (2 * l_x + 1) + (2 * l_t + 1); }
  int layer_count() const { return static_cast<int>(weights.size()); }
};

// Activations captured by a forward call, consumed by deform_backward.
struct DeformRecord {
  bool valid = false;
  double t = 0.0;
  std::vector<Eigen::Vector3d> means;
  Eigen::MatrixXd input;                // input_dim x batch
  std::vector<Eigen::MatrixXd> hidden;  // post-ReLU, width x batch each
};

// Evaluates the field at every mean for timestamp t. Offsets are returned
// in input order. Pass a record to enable a later backward call.
std::vector<DeformOffsets> deform(const DeformField& field,
                                  const std::vector<Eigen::Vector3d>& means,
                                  double t, DeformRecord* record = nullptr);

struct DeformFieldGrad {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;

  void init(const DeformField& field);
  bool sized() const { return !d_weights.empty(); }
  bool finite() const;
  DeformFieldGrad& operator+=(const DeformFieldGrad& o);
  void scale(double s);
};

// Accumulates parameter gradients and, if d_means is non-null, gradients
// with respect to the canonical means (aligned with record.means). Both
// targets must be pre-sized; gradients add to whatever is already there.
void deform_backward(const DeformField& field, const DeformRecord& record,
                     const std::vector<DeformOffsets>& upstream,
                     DeformFieldGrad* field_grad,
                     std::vector<Eigen::Vector3d>* d_means);

// Applies offsets to the Gaussians carrying the given tag, in occurrence
// order; all other Gaussians are untouched. offsets.size() must equal the
// tag count.
void apply_offsets(GaussianCloud* cloud, GaussianTag tag,
                   const std::vector<DeformOffsets>& offsets);

// Reverse of apply_offsets for gradients: grads arrives holding gradients
// with respect to the deformed parameters (same indexing as the cloud),
// and leaves holding gradients with respect to the canonical parameters.
// Returns the gradients with respect to the offsets, in tag occurrence
// order. canonical must be the cloud before apply_offsets.
std::vector<DeformOffsets> offset_grads(const GaussianCloud& canonical,
                                        GaussianTag tag,
                                        const std::vector<DeformOffsets>& offsets,
                                        RenderGradients* grads);

}  // namespace blursplat
