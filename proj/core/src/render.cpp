#include "blursplat/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "blursplat/parallel.hpp"

namespace blursplat {

namespace {

constexpr std::size_t kRowsPerBlock = 4;  // fixed: determinism across threads

struct Splat {
  double u, v;
  double kxx, kxy, kyy;  // conic (inverse screen covariance)
  double opacity;
  double z;
  double radius;
  Eigen::Vector3d color;
  std::uint32_t orig;
};

struct Pipeline {
  std::vector<Splat> splats;  // depth order
  // CSR of splat indices covering each pixel row, in depth order.
  std::vector<std::size_t> row_begin;
  std::vector<std::uint32_t> row_items;
};

Pipeline build_pipeline(const GaussianCloud& cloud, const Pose& pose,
                        const Camera& cam) {
  Pipeline p;
  std::vector<double> depths;
  std::vector<Splat> unsorted;
  unsorted.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto proj =
        project_gaussian(cloud.means[i], cloud.log_scales[i],
                         cloud.rotations[i], cloud.opacity_logits[i], pose, cam);
    if (!proj) continue;
    Splat s;
    s.u = proj->mean[0];
    s.v = proj->mean[1];
    s.kxx = proj->conic(0, 0);
    s.kxy = proj->conic(0, 1);
    s.kyy = proj->conic(1, 1);
    s.opacity = proj->opacity;
    s.z = proj->z;
    s.radius = proj->radius;
    s.color = cloud.colors[i];
    s.orig = static_cast<std::uint32_t>(i);
    unsorted.push_back(s);
    depths.push_back(proj->z);
  }
  const auto order = depth_sort(depths);
  p.splats.reserve(unsorted.size());
  for (auto idx : order) p.splats.push_back(unsorted[idx]);

  const int h = cam.height;
  std::vector<std::size_t> counts(static_cast<std::size_t>(h) + 1, 0);
  auto row_span = [&](const Splat& s, int* r0, int* r1) {
    *r0 = std::max(0, static_cast<int>(std::ceil(s.v - s.radius)));
    *r1 = std::min(h - 1, static_cast<int>(std::floor(s.v + s.radius)));
  };
  for (const Splat& s : p.splats) {
    int r0, r1;
    row_span(s, &r0, &r1);
    for (int r = r0; r <= r1; ++r) ++counts[static_cast<std::size_t>(r) + 1];
  }
  p.row_begin.resize(static_cast<std::size_t>(h) + 1, 0);
  for (int r = 0; r < h; ++r) p.row_begin[r + 1] = p.row_begin[r] + counts[r + 1];
  p.row_items.resize(p.row_begin[h]);
  std::vector<std::size_t> cursor(p.row_begin.begin(), p.row_begin.end() - 1);
  for (std::uint32_t si = 0; si < p.splats.size(); ++si) {
    int r0, r1;
    row_span(p.splats[si], &r0, &r1);
    for (int r = r0; r <= r1; ++r) p.row_items[cursor[r]++] = si;
  }
  return p;
}

struct Contrib {
  std::uint32_t splat;
  double alpha;
  double t;  // transmittance before this splat
};

// One pixel, front to back. Records contributors when record != nullptr.
inline void composite_pixel(const Pipeline& p, int r, int c,
                            const RenderOptions& opts, double* px,
                            double* depth_px,
                            std::vector<Contrib>* record) {
  double t = 1.0;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  double best_w = 0.0, best_z = 0.0;
  for (std::size_t k = p.row_begin[r]; k < p.row_begin[r + 1]; ++k) {
    if (t < opts.transmittance_floor) break;
    const Splat& s = p.splats[p.row_items[k]];
    const double dx = c - s.u;
    if (dx > s.radius || dx < -s.radius) continue;
    const double dy = r - s.v;
    const double power =
        -0.5 * (s.kxx * dx * dx + 2.0 * s.kxy * dx * dy + s.kyy * dy * dy);
    const double alpha = s.opacity * std::exp(power);
    const double w = alpha * t;
    acc += s.color * w;
    if (record) record->push_back({p.row_items[k], alpha, t});
    if (depth_px && w > best_w) {
      best_w = w;
      best_z = s.z;
    }
    t *= 1.0 - alpha;
  }
  acc += t * opts.background;
  px[0] = acc[0];
  px[1] = acc[1];
  px[2] = acc[2];
  if (depth_px) *depth_px = best_z;
}

// Screen-space gradient accumulator for one splat.
struct Accum {
  double d_u = 0, d_v = 0;
  double d_xx = 0, d_xy = 0, d_yy = 0;  // dL/d(screen covariance)
  double d_opacity = 0;                 // w.r.t. sigmoid output
  Eigen::Vector3d d_color = Eigen::Vector3d::Zero();

  void add(const Accum& o) {
    d_u += o.d_u;
    d_v += o.d_v;
    d_xx += o.d_xx;
    d_xy += o.d_xy;
    d_yy += o.d_yy;
    d_opacity += o.d_opacity;
    d_color += o.d_color;
  }
};

}  // namespace

Image render(const GaussianCloud& cloud, const Pose& pose, const Camera& cam,
             const RenderOptions& opts, DepthMap* depth_out) {
  cam.validate();
  const Pipeline p = build_pipeline(cloud, pose, cam);
  Image img(cam.width, cam.height);
  if (depth_out) *depth_out = DepthMap(cam.width, cam.height);

  parallel_for_blocks(
      static_cast<std::size_t>(cam.height), kRowsPerBlock, opts.threads,
      [&](std::size_t, std::size_t rbegin, std::size_t rend) {
        for (std::size_t r = rbegin; r < rend; ++r) {
          for (int c = 0; c < cam.width; ++c) {
            double* dz = depth_out
                             ? &depth_out->data[r * cam.width + c]
                             : nullptr;
            composite_pixel(p, static_cast<int>(r), c, opts,
                            img.px(static_cast<int>(r), c), dz, nullptr);
          }
        }
      });
  return img;
}

void RenderGradients::init(std::size_t n) {
  d_means.assign(n, Eigen::Vector3d::Zero());
  d_log_scales.assign(n, Eigen::Vector3d::Zero());
  d_rotations.assign(n, Eigen::Vector4d::Zero());
  d_opacity_logits.assign(n, 0.0);
  d_colors.assign(n, Eigen::Vector3d::Zero());
  d_pose = PoseGrad{};
}

bool RenderGradients::finite() const {
  for (const auto& v : d_means)
    if (!v.allFinite()) return false;
  for (const auto& v : d_log_scales)
    if (!v.allFinite()) return false;
  for (const auto& v : d_rotations)
    if (!v.allFinite()) return false;
  for (double v : d_opacity_logits)
    if (!std::isfinite(v)) return false;
  for (const auto& v : d_colors)
    if (!v.allFinite()) return false;
  return d_pose.omega.allFinite() && d_pose.t.allFinite();
}

Image render_with_grad(const GaussianCloud& cloud, const Pose& pose,
                       const Camera& cam, const Image& upstream,
                       const RenderOptions& opts, RenderGradients* grads) {
  cam.validate();
  if (upstream.width != cam.width || upstream.height != cam.height)
    throw std::invalid_argument("render_with_grad: upstream dims mismatch");
  if (!grads || grads->size() != cloud.size())
    throw std::invalid_argument("render_with_grad: grads not sized to cloud");

  const Pipeline p = build_pipeline(cloud, pose, cam);
  Image img(cam.width, cam.height);

  const std::size_t nblocks =
      num_blocks_for(static_cast<std::size_t>(cam.height), kRowsPerBlock);
  std::vector<std::vector<Accum>> partials(
      nblocks, std::vector<Accum>(p.splats.size()));

  parallel_for_blocks(
      static_cast<std::size_t>(cam.height), kRowsPerBlock, opts.threads,
      [&](std::size_t block, std::size_t rbegin, std::size_t rend) {
        std::vector<Accum>& acc = partials[block];
        std::vector<Contrib> contribs;
        for (std::size_t r = rbegin; r < rend; ++r) {
          for (int c = 0; c < cam.width; ++c) {
            contribs.clear();
            composite_pixel(p, static_cast<int>(r), c, opts,
                            img.px(static_cast<int>(r), c), nullptr,
                            &contribs);
            if (contribs.empty()) continue;

            const Eigen::Vector3d up = upstream.rgb(static_cast<int>(r), c);
            const Contrib& last = contribs.back();
            const double t_final = last.t * (1.0 - last.alpha);
            Eigen::Vector3d suffix = t_final * opts.background;
            for (std::size_t i = contribs.size(); i-- > 0;) {
              const Contrib& cb = contribs[i];
              const Splat& s = p.splats[cb.splat];
              Accum& a = acc[cb.splat];

              const double w = cb.alpha * cb.t;
              a.d_color += up * w;

              const double d_alpha =
                  up.dot(s.color) * cb.t - up.dot(suffix) / (1.0 - cb.alpha);
              suffix += s.color * w;

              // alpha = opacity * exp(power)
              a.d_opacity += d_alpha * (cb.alpha / s.opacity);
              const double d_power = d_alpha * cb.alpha;

              const double dx = c - s.u;
              const double dy = static_cast<double>(r) - s.v;
              const double gx = s.kxx * dx + s.kxy * dy;
              const double gy = s.kxy * dx + s.kyy * dy;
              a.d_u += d_power * gx;
              a.d_v += d_power * gy;
              a.d_xx += 0.5 * d_power * gx * gx;
              a.d_xy += 0.5 * d_power * gx * gy;
              a.d_yy += 0.5 * d_power * gy * gy;
            }
          }
        }
      });

  // Merge phase-A partials in block order (deterministic).
  std::vector<Accum> total(p.splats.size());
  for (const auto& block : partials)
    for (std::size_t i = 0; i < total.size(); ++i) total[i].add(block[i]);

  // Phase B: chain screen-space gradients to world parameters and pose.
  // Per-splat slots are disjoint; pose partials merge in block order.
  const std::size_t kSplatBlock = 64;
  const std::size_t sblocks = num_blocks_for(p.splats.size(), kSplatBlock);
  std::vector<PoseGrad> pose_partials(sblocks);
  parallel_for_blocks(
      p.splats.size(), kSplatBlock, opts.threads,
      [&](std::size_t block, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          const Splat& s = p.splats[i];
          const Accum& a = total[i];
          const std::size_t g = s.orig;

          grads->d_colors[g] += a.d_color;
          grads->d_opacity_logits[g] +=
              a.d_opacity * s.opacity * (1.0 - s.opacity);

          ScreenGrad sg;
          sg.d_u = a.d_u;
          sg.d_v = a.d_v;
          sg.d_cov << a.d_xx, a.d_xy, a.d_xy, a.d_yy;
          GaussianParamGrad pg;
          project_gaussian_backward(cloud.means[g], cloud.log_scales[g],
                                    cloud.rotations[g], pose, cam, sg, &pg,
                                    &pose_partials[block]);
          grads->d_means[g] += pg.d_mean;
          grads->d_log_scales[g] += pg.d_log_scale;
          grads->d_rotations[g] += pg.d_rotation;
        }
      });
  for (const auto& pp : pose_partials) grads->d_pose += pp;
  return img;
}

}  // namespace blursplat
