#include "blursplat/render.hpp"

#include <cmath>
#include <vector>

#include "blursplat/rng.hpp"
#include "doctest.h"

using namespace blursplat;

namespace {

Camera small_camera() {
  Camera cam;
  cam.fx = cam.fy = 20.0;
  cam.cx = cam.cy = 8.0;
  cam.width = cam.height = 16;
  return cam;
}

// Random scene whose splats cover the whole image (3 sigma footprints
// exceed the frame), so no spatial cutoff introduces discontinuities in
// finite-difference checks.
GaussianCloud wide_cloud(Rng& rng, int count) {
  GaussianCloud g;
  for (int i = 0; i < count; ++i) {
    const double z = rng.uniform(1.5, 3.0);
    const Eigen::Vector3d mean{rng.uniform(-0.3, 0.3) * z,
                               rng.uniform(-0.3, 0.3) * z, z};
    const Eigen::Vector3d log_s{rng.uniform(-0.2, 0.4), rng.uniform(-0.2, 0.4),
                                rng.uniform(-0.2, 0.4)};
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(),
                         rng.normal());
    g.add(mean, log_s, Rotation::from_quaternion_lenient(q),
          rng.uniform(-1.0, 1.38),
          {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0),
           rng.uniform(0.0, 1.0)},
          GaussianTag::kStatic);
  }
  return g;
}

Image random_upstream(Rng& rng, int w, int h) {
  Image up(w, h);
  for (auto& v : up.data) v = rng.uniform(-1.0, 1.0);
  return up;
}

double probe_loss(const GaussianCloud& g, const Pose& pose, const Camera& cam,
                  const Image& up, const RenderOptions& opts) {
  const Image img = render(g, pose, cam, opts);
  double L = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) L += up.data[i] * img.data[i];
  return L;
}

void check_rel(double analytic, double fd) {
  const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-3});
  CHECK(std::abs(analytic - fd) / denom < 1e-4);
}

}  // namespace

TEST_CASE("empty scene renders the background") {
  const Camera cam = small_camera();
  RenderOptions opts;
  opts.background = {0.2, 0.4, 0.6};
  const Image img = render(GaussianCloud{}, Pose{}, cam, opts);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c)
      CHECK((img.rgb(r, c) - opts.background).norm() == 0.0);
}

TEST_CASE("single centered splat has the closed-form pixel value") {
  Camera cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 64.0;
  cam.width = cam.height = 128;
  // Screen covariance (fx sigma / z)^2 + dilation = 1 at z = 1.
  const double sigma = std::sqrt((1.0 - kScreenDilation)) / cam.fx;
  GaussianCloud g;
  g.add({0.0, 0.0, 1.0}, Eigen::Vector3d::Constant(std::log(sigma)),
        Rotation{}, 10.0, {1.0, 0.0, 0.0}, GaussianTag::kStatic);
  RenderOptions opts;
  opts.background = {0.0, 0.0, 1.0};
  const Image img = render(g, Pose{}, cam, opts);
  // Pixel (64,64) sits exactly at the splat center: d = 0, kernel = 1.
  const double a = sigmoid(10.0);
  CHECK(img.rgb(64, 64)[0] == doctest::Approx(a).epsilon(1e-12));
  CHECK(img.rgb(64, 64)[1] == doctest::Approx(0.0));
  CHECK(img.rgb(64, 64)[2] == doctest::Approx(1.0 - a).epsilon(1e-9));
}

TEST_CASE("blending matches an independent scalar evaluation") {
  const Camera cam = small_camera();
  Rng rng(41);
  const GaussianCloud g = wide_cloud(rng, 2);
  RenderOptions opts;
  opts.background = {0.1, 0.2, 0.3};
  const Image img = render(g, Pose{}, cam, opts);

  // Direct evaluation, spelled out without the renderer's machinery.
  struct Flat {
    double u, v, kxx, kxy, kyy, o, z;
    Eigen::Vector3d c;
  };
  std::vector<Flat> flats;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Eigen::Vector3d m = g.means[i];
    const Eigen::Vector3d s = g.log_scales[i].array().exp();
    const Eigen::Matrix3d R = g.rotations[i].matrix();
    const Eigen::Matrix3d sigma =
        R * s.array().square().matrix().asDiagonal() * R.transpose();
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx / m[2], 0, -cam.fx * m[0] / (m[2] * m[2]),
        0, cam.fy / m[2], -cam.fy * m[1] / (m[2] * m[2]);
    Eigen::Matrix2d cov = J * sigma * J.transpose();
    cov(0, 0) += kScreenDilation;
    cov(1, 1) += kScreenDilation;
    const Eigen::Matrix2d K = cov.inverse();
    flats.push_back({cam.fx * m[0] / m[2] + cam.cx,
                     cam.fy * m[1] / m[2] + cam.cy, K(0, 0), K(0, 1), K(1, 1),
                     sigmoid(g.opacity_logits[i]), m[2], g.colors[i]});
  }
  std::sort(flats.begin(), flats.end(),
            [](const Flat& a, const Flat& b) { return a.z < b.z; });
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      double t = 1.0;
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (const Flat& f : flats) {
        const double dx = c - f.u, dy = r - f.v;
        const double alpha =
            f.o * std::exp(-0.5 * (f.kxx * dx * dx + 2 * f.kxy * dx * dy +
                                   f.kyy * dy * dy));
        acc += f.c * alpha * t;
        t *= 1.0 - alpha;
      }
      acc += t * opts.background;
      CHECK((img.rgb(r, c) - acc).norm() < 1e-10);
    }
  }
}

TEST_CASE("gradients match finite differences on a small scene") {
  const Camera cam = small_camera();
  Rng rng(42);
  GaussianCloud g = wide_cloud(rng, 5);
  Pose pose;
  pose.rotation = so3_exp({0.03, -0.02, 0.05});
  pose.translation = {0.04, -0.03, 0.02};
  RenderOptions opts;
  opts.background = {0.1, 0.2, 0.3};
  const Image up = random_upstream(rng, cam.width, cam.height);

  RenderGradients grads;
  grads.init(g.size());
  render_with_grad(g, pose, cam, up, opts, &grads);

  const double eps = 1e-5;
  auto fd = [&](auto&& mutate) {
    GaussianCloud gp = g, gm = g;
    Pose pp = pose, pm = pose;
    mutate(gp, pp, eps);
    mutate(gm, pm, -eps);
    return (probe_loss(gp, pp, cam, up, opts) -
            probe_loss(gm, pm, cam, up, opts)) /
           (2 * eps);
  };

  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      check_rel(grads.d_means[i][k], fd([&](GaussianCloud& gg, Pose&, double e) {
                  gg.means[i][k] += e;
                }));
      check_rel(grads.d_log_scales[i][k],
                fd([&](GaussianCloud& gg, Pose&, double e) {
                  gg.log_scales[i][k] += e;
                }));
      check_rel(grads.d_colors[i][k],
                fd([&](GaussianCloud& gg, Pose&, double e) {
                  gg.colors[i][k] += e;
                }));
    }
    check_rel(grads.d_opacity_logits[i],
              fd([&](GaussianCloud& gg, Pose&, double e) {
                gg.opacity_logits[i] += e;
              }));
    for (int k = 0; k < 4; ++k) {
      check_rel(grads.d_rotations[i][k],
                fd([&](GaussianCloud& gg, Pose&, double e) {
                  Eigen::Vector4d v(gg.rotations[i].q.w(), gg.rotations[i].q.x(),
                                    gg.rotations[i].q.y(), gg.rotations[i].q.z());
                  v[k] += e;
                  gg.rotations[i] = Rotation::from_quaternion_lenient(
                      Eigen::Quaterniond(v[0], v[1], v[2], v[3]));
                }));
    }
  }
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d axis = Eigen::Vector3d::Zero();
    axis[k] = 1.0;
    check_rel(grads.d_pose.omega[k],
              fd([&, axis](GaussianCloud&, Pose& po, double e) {
                po.rotation = po.rotation * so3_exp(e * axis);
              }));
    check_rel(grads.d_pose.t[k], fd([&, k](GaussianCloud&, Pose& po, double e) {
                po.translation[k] += e;
              }));
  }
}

TEST_CASE("zero upstream gives zero gradients") {
  const Camera cam = small_camera();
  Rng rng(43);
  const GaussianCloud g = wide_cloud(rng, 4);
  RenderGradients grads;
  grads.init(g.size());
  Image up(cam.width, cam.height, 0.0);
  render_with_grad(g, Pose{}, cam, up, RenderOptions{}, &grads);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(grads.d_means[i].norm() == 0.0);
    CHECK(grads.d_log_scales[i].norm() == 0.0);
    CHECK(grads.d_rotations[i].norm() == 0.0);
    CHECK(grads.d_opacity_logits[i] == 0.0);
    CHECK(grads.d_colors[i].norm() == 0.0);
  }
  CHECK(grads.d_pose.omega.norm() == 0.0);
  CHECK(grads.d_pose.t.norm() == 0.0);
}

TEST_CASE("occluded color gradient is suppressed by transmittance") {
  const Camera cam = small_camera();
  GaussianCloud g;
  // Front splat so wide and opaque that its kernel is ~1 across the whole
  // frame; transmittance behind it falls under the blending floor.
  g.add({0, 0, 1.0}, Eigen::Vector3d::Constant(std::log(100.0)), Rotation{},
        12.0, {0.9, 0.1, 0.1}, GaussianTag::kStatic);
  g.add({0, 0, 2.0}, Eigen::Vector3d::Constant(std::log(1.0)), Rotation{},
        2.0, {0.1, 0.9, 0.1}, GaussianTag::kStatic);
  Rng rng(44);
  const Image up = random_upstream(rng, cam.width, cam.height);
  RenderGradients grads;
  grads.init(g.size());
  render_with_grad(g, Pose{}, cam, up, RenderOptions{}, &grads);
  CHECK(grads.d_colors[1].norm() < 1e-6);
  CHECK(grads.d_colors[0].norm() > 1e-3);
}

TEST_CASE("pixel values stay inside [0,1] for valid colors") {
  const Camera cam = small_camera();
  Rng rng(45);
  const GaussianCloud g = wide_cloud(rng, 30);
  RenderOptions opts;
  opts.background = {0.5, 0.0, 1.0};
  const Image img = render(g, Pose{}, cam, opts);
  for (double v : img.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("storage order permutation leaves the image unchanged") {
  const Camera cam = small_camera();
  Rng rng(46);
  GaussianCloud g = wide_cloud(rng, 12);
  const Image a = render(g, Pose{}, cam, RenderOptions{});

  std::vector<std::size_t> perm(g.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  GaussianCloud shuffled;
  for (auto i : perm)
    shuffled.add(g.means[i], g.log_scales[i], g.rotations[i],
                 g.opacity_logits[i], g.colors[i], g.tags[i]);
  const Image b = render(shuffled, Pose{}, cam, RenderOptions{});
  CHECK(a.data == b.data);
}

TEST_CASE("renders are bitwise identical across thread counts") {
  const Camera cam = small_camera();
  Rng rng(47);
  const GaussianCloud g = wide_cloud(rng, 10);
  const Image up = random_upstream(rng, cam.width, cam.height);

  RenderOptions o1, o3;
  o1.threads = 1;
  o3.threads = 3;
  CHECK(render(g, Pose{}, cam, o1).data == render(g, Pose{}, cam, o3).data);

  RenderGradients g1, g3;
  g1.init(g.size());
  g3.init(g.size());
  const Image i1 = render_with_grad(g, Pose{}, cam, up, o1, &g1);
  const Image i3 = render_with_grad(g, Pose{}, cam, up, o3, &g3);
  CHECK(i1.data == i3.data);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(g1.d_means[i] == g3.d_means[i]);
    CHECK(g1.d_log_scales[i] == g3.d_log_scales[i]);
    CHECK(g1.d_rotations[i] == g3.d_rotations[i]);
    CHECK(g1.d_opacity_logits[i] == g3.d_opacity_logits[i]);
    CHECK(g1.d_colors[i] == g3.d_colors[i]);
  }
  CHECK(g1.d_pose.omega == g3.d_pose.omega);
  CHECK(g1.d_pose.t == g3.d_pose.t);
}

TEST_CASE("render_with_grad forward equals render bitwise") {
  const Camera cam = small_camera();
  Rng rng(48);
  const GaussianCloud g = wide_cloud(rng, 8);
  RenderOptions opts;
  opts.background = {0.3, 0.3, 0.3};
  const Image up = random_upstream(rng, cam.width, cam.height);
  RenderGradients grads;
  grads.init(g.size());
  CHECK(render(g, Pose{}, cam, opts).data ==
        render_with_grad(g, Pose{}, cam, up, opts, &grads).data);
}

TEST_CASE("upstream dimension mismatch is rejected") {
  const Camera cam = small_camera();
  GaussianCloud g;
  RenderGradients grads;
  grads.init(0);
  Image up(8, 8, 0.0);
  CHECK_THROWS_AS(render_with_grad(g, Pose{}, cam, up, RenderOptions{}, &grads),
                  std::invalid_argument);
}

TEST_CASE("depth output reports the dominant contributor") {
  const Camera cam = small_camera();
  GaussianCloud g;
  g.add({0, 0, 1.5}, Eigen::Vector3d::Constant(std::log(0.05)), Rotation{},
        6.0, {1, 1, 1}, GaussianTag::kStatic);
  DepthMap depth;
  render(g, Pose{}, cam, RenderOptions{}, &depth);
  CHECK(depth.at(8, 8) == doctest::Approx(1.5));
  CHECK(depth.at(0, 0) == 0.0);  // outside the splat footprint
}
