#include "blursplat/deform.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "blursplat/encoding.hpp"
#include "blursplat/lie.hpp"
#include "blursplat/rng.hpp"

namespace blursplat {
namespace {

Eigen::Vector4d qvec(const Eigen::Quaterniond& q) {
  return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

}  // namespace

DeformField DeformField::create(GaussianTag role, int depth, int width,
                                int l_x, int l_t, std::uint64_t seed) {
  if (depth < 0 || width <= 0 || l_x < 0 || l_t < 0) {
    throw std::invalid_argument("DeformField::create: bad architecture");
  }
  DeformField field;
  field.role = role;
  field.l_x = l_x;
  field.l_t = l_t;
  Rng rng(seed);
  const int in_dim = field.input_dim();
  auto push_layer = [&field, &rng](int rows, int cols, bool zero) {
    Eigen::MatrixXd w(rows, cols);
    if (zero) {
      w.setZero();
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          w(r, c) = rng.uniform(-bound, bound);
        }
      }
    }
    field.weights.push_back(std::move(w));
    field.biases.push_back(Eigen::VectorXd::Zero(rows));
  };
  for (int l = 0; l < depth; ++l) {
    push_layer(width, l == 0 ? in_dim : width, false);
  }
  push_layer(10, depth == 0 ? in_dim : width, true);
  return field;
}

std::vector<DeformOffsets> deform(const DeformField& field,
                                  const std::vector<Eigen::Vector3d>& means,
                                  double t, DeformRecord* record) {
  if (!field.initialized()) {
    throw std::logic_error("deform: field has no layers");
  }
  const int in_dim = field.input_dim();
  if (field.weights.front().cols() != in_dim) {
    throw std::invalid_argument("deform: first layer does not match encoding");
  }
  if (field.weights.back().rows() != 10) {
    throw std::invalid_argument("deform: output layer must emit 10 values");
  }
  const int batch = static_cast<int>(means.size());
  const int pos_dim = encoded_size(3, field.l_x);

  Eigen::MatrixXd input(in_dim, batch);
  const Eigen::VectorXd t_enc =
      encode(Eigen::VectorXd::Constant(1, t), field.l_t);
  for (int i = 0; i < batch; ++i) {
    input.col(i).head(pos_dim) = encode(means[i], field.l_x);
    input.col(i).tail(t_enc.size()) = t_enc;
  }

  const int layers = field.layer_count();
  std::vector<Eigen::MatrixXd> hidden;
  hidden.reserve(layers - 1);
  const Eigen::MatrixXd* prev = &input;
  for (int l = 0; l + 1 < layers; ++l) {
    Eigen::MatrixXd z =
        (field.weights[l] * (*prev)).colwise() + field.biases[l];
    hidden.push_back(z.array().max(0.0).matrix());
    prev = &hidden.back();
  }
  const Eigen::MatrixXd out =
      (field.weights.back() * (*prev)).colwise() + field.biases.back();

  std::vector<DeformOffsets> offsets(batch);
  for (int i = 0; i < batch; ++i) {
    offsets[i].dx = out.col(i).head<3>();
    offsets[i].dr = out.col(i).segment<4>(3);
    offsets[i].ds = out.col(i).tail<3>();
  }
  if (record != nullptr) {
    record->valid = true;
    record->t = t;
    record->means = means;
    record->input = std::move(input);
    record->hidden = std::move(hidden);
  }
  return offsets;
}

void DeformFieldGrad::init(const DeformField& field) {
  d_weights.clear();
  d_biases.clear();
  for (std::size_t l = 0; l < field.weights.size(); ++l) {
    d_weights.push_back(Eigen::MatrixXd::Zero(field.weights[l].rows(),
                                              field.weights[l].cols()));
    d_biases.push_back(Eigen::VectorXd::Zero(field.biases[l].size()));
  }
}

bool DeformFieldGrad::finite() const {
  for (const auto& w : d_weights) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : d_biases) {
    if (!b.allFinite()) return false;
  }
  return true;
}

DeformFieldGrad& DeformFieldGrad::operator+=(const DeformFieldGrad& o) {
  if (d_weights.size() != o.d_weights.size()) {
    throw std::invalid_argument("DeformFieldGrad: shape mismatch");
  }
  for (std::size_t l = 0; l < d_weights.size(); ++l) {
    d_weights[l] += o.d_weights[l];
    d_biases[l] += o.d_biases[l];
  }
  return *this;
}

void DeformFieldGrad::scale(double s) {
  for (auto& w : d_weights) w *= s;
  for (auto& b : d_biases) b *= s;
}

void deform_backward(const DeformField& field, const DeformRecord& record,
                     const std::vector<DeformOffsets>& upstream,
                     DeformFieldGrad* field_grad,
                     std::vector<Eigen::Vector3d>* d_means) {
  if (!field.initialized()) {
    throw std::logic_error("deform_backward: field has no layers");
  }
  if (!record.valid) {
    throw std::logic_error("deform_backward: no recorded forward pass");
  }
  const int batch = static_cast<int>(record.means.size());
  if (static_cast<int>(upstream.size()) != batch) {
    throw std::invalid_argument("deform_backward: upstream size mismatch");
  }
  if (field_grad == nullptr || !field_grad->sized()) {
    throw std::invalid_argument("deform_backward: field_grad not initialized");
  }
  if (field_grad->d_weights.size() != field.weights.size()) {
    throw std::invalid_argument("deform_backward: field_grad shape mismatch");
  }
  if (d_means != nullptr && static_cast<int>(d_means->size()) != batch) {
    throw std::invalid_argument("deform_backward: d_means size mismatch");
  }
  if (batch == 0) return;

  Eigen::MatrixXd g(10, batch);
  for (int i = 0; i < batch; ++i) {
    g.col(i).head<3>() = upstream[i].dx;
    g.col(i).segment<4>(3) = upstream[i].dr;
    g.col(i).tail<3>() = upstream[i].ds;
  }

  const int layers = field.layer_count();
  const Eigen::MatrixXd* prev =
      record.hidden.empty() ? &record.input : &record.hidden.back();
  field_grad->d_weights.back().noalias() += g * prev->transpose();
  field_grad->d_biases.back() += g.rowwise().sum();
  Eigen::MatrixXd ga = field.weights.back().transpose() * g;

  for (int l = layers - 2; l >= 0; --l) {
    ga = (record.hidden[l].array() > 0.0).select(ga.array(), 0.0).matrix();
    const Eigen::MatrixXd* below =
        (l == 0) ? &record.input : &record.hidden[l - 1];
    field_grad->d_weights[l].noalias() += ga * below->transpose();
    field_grad->d_biases[l] += ga.rowwise().sum();
    ga = field.weights[l].transpose() * ga;
  }

  if (d_means != nullptr) {
    const int pos_dim = encoded_size(3, field.l_x);
    for (int i = 0; i < batch; ++i) {
      (*d_means)[i] += encode_backward(record.means[i], field.l_x,
                                       ga.col(i).head(pos_dim));
    }
  }
}

void apply_offsets(GaussianCloud* cloud, GaussianTag tag,
                   const std::vector<DeformOffsets>& offsets) {
  if (cloud == nullptr) {
    throw std::invalid_argument("apply_offsets: null cloud");
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < cloud->size(); ++i) {
    if (cloud->tags[i] != tag) continue;
    if (k >= offsets.size()) {
      throw std::invalid_argument("apply_offsets: offset count mismatch");
    }
    const DeformOffsets& o = offsets[k++];
    cloud->means[i] += o.dx;
    cloud->log_scales[i] += o.ds;
    if (!o.dr.isZero(0.0)) {
      Eigen::Quaterniond inc(1.0 + o.dr[0], o.dr[1], o.dr[2], o.dr[3]);
      inc.normalize();
      cloud->rotations[i] =
          Rotation::from_quaternion_lenient(cloud->rotations[i].q * inc);
    }
  }
  if (k != offsets.size()) {
    throw std::invalid_argument("apply_offsets: offset count mismatch");
  }
}

std::vector<DeformOffsets> offset_grads(
    const GaussianCloud& canonical, GaussianTag tag,
    const std::vector<DeformOffsets>& offsets, RenderGradients* grads) {
  if (grads == nullptr || grads->size() != canonical.size()) {
    throw std::invalid_argument("offset_grads: gradient size mismatch");
  }
  std::vector<DeformOffsets> up(offsets.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    if (canonical.tags[i] != tag) continue;
    if (k >= offsets.size()) {
      throw std::invalid_argument("offset_grads: offset count mismatch");
    }
    const DeformOffsets& o = offsets[k];
    DeformOffsets& u = up[k];
    ++k;
    // Mean and log-scale shifts are additive, so those gradients pass
    // through to both the offset and the canonical parameter.
    u.dx = grads->d_means[i];
    u.ds = grads->d_log_scales[i];

    // Stored rotation is sign * (q * n), n = normalize(e + dr).
    Eigen::Vector4d v(1.0 + o.dr[0], o.dr[1], o.dr[2], o.dr[3]);
    const double m = v.norm();
    const Eigen::Vector4d nv = v / m;
    const Eigen::Quaterniond n(nv[0], nv[1], nv[2], nv[3]);
    const Eigen::Quaterniond& q = canonical.rotations[i].q;
    const Eigen::Quaterniond raw = q * n;
    const double sign = raw.w() < 0.0 ? -1.0 : 1.0;

    const Eigen::Vector4d a = sign * grads->d_rotations[i];
    Eigen::Vector4d dq = quat_right(n).transpose() * a;
    const Eigen::Vector4d qv = qvec(q);
    dq -= dq.dot(qv) * qv;  // radial direction carries no rotation change
    Eigen::Vector4d dv = quat_left(q).transpose() * a;
    dv = (dv - nv.dot(dv) * nv) / m;

    u.dr = dv;
    grads->d_rotations[i] = dq;
  }
  if (k != offsets.size()) {
    throw std::invalid_argument("offset_grads: offset count mismatch");
  }
  return up;
}

}  // namespace blursplat
