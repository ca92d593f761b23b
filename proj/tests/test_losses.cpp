#include "doctest.h"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "blursplat/camera.hpp"
#include "blursplat/image.hpp"
#include "blursplat/lie.hpp"
#include "blursplat/losses.hpp"
#include "blursplat/rng.hpp"

using namespace blursplat;

namespace {

void check_rel(double analytic, double fd) {
  const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-3});
  CHECK(std::abs(analytic - fd) / denom < 1e-4);
}

Image random_image(std::uint64_t seed, int w, int h) {
  Rng rng(seed);
  Image img(w, h);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);
  return img;
}

// Pixels on a 1/1024 grid keep every partial L1 sum exactly
// representable, so set identities hold with zero tolerance.
Image dyadic_image(std::uint64_t seed, int w, int h) {
  Rng rng(seed);
  Image img(w, h);
  for (double& v : img.data) {
    v = static_cast<double>(rng.below(1024)) / 1024.0;
  }
  return img;
}

Mask random_mask(std::uint64_t seed, int w, int h) {
  Rng rng(seed);
  Mask m(w, h);
  for (auto& v : m.data) v = rng.uniform() < 0.4 ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("masked l1 basics") {
  const Image a = random_image(141, 8, 6);
  const Mask none(8, 6, 0);
  LossResult r = masked_l1(a, a, none);
  CHECK(r.value == 0.0);
  for (double g : r.grad.data) CHECK(g == 0.0);

  const Image b = random_image(142, 8, 6);
  const Mask all(8, 6, 1);
  r = masked_l1(a, b, all);
  CHECK(r.value == 0.0);
  for (double g : r.grad.data) CHECK(g == 0.0);

  // 2x1 image, per-pixel uniform diffs (0.5, -0.2), second pixel masked.
  Image pred(2, 1), target(2, 1);
  pred.set_rgb(0, 0, Eigen::Vector3d(0.7, 0.7, 0.7));
  target.set_rgb(0, 0, Eigen::Vector3d(0.2, 0.2, 0.2));
  pred.set_rgb(0, 1, Eigen::Vector3d(0.1, 0.1, 0.1));
  target.set_rgb(0, 1, Eigen::Vector3d(0.3, 0.3, 0.3));
  Mask second(2, 1, 0);
  second.set(0, 1, 1);
  r = masked_l1(pred, target, second);
  CHECK(r.value == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(r.grad.rgb(0, 0) == Eigen::Vector3d(1.0, 1.0, 1.0));
  CHECK(r.grad.rgb(0, 1) == Eigen::Vector3d(0.0, 0.0, 0.0));

  Image wrong(3, 1);
  CHECK_THROWS_AS(masked_l1(pred, wrong, second), std::invalid_argument);
  Mask wrong_mask(3, 1, 0);
  CHECK_THROWS_AS(masked_l1(pred, target, wrong_mask), std::invalid_argument);
}

TEST_CASE("complementary masks partition the full l1 exactly") {
  const Image pred = dyadic_image(143, 16, 12);
  const Image target = dyadic_image(144, 16, 12);
  const Mask mask = random_mask(145, 16, 12);
  Mask comp = mask;
  for (auto& v : comp.data) v = v == 0 ? 1 : 0;

  const LossResult inside = masked_l1(pred, target, mask);
  const LossResult outside = masked_l1(pred, target, comp);
  const LossResult full = full_l1(pred, target);
  CHECK(inside.value + outside.value == full.value);

  // Same identity on continuous values, up to rounding.
  const Image p2 = random_image(146, 16, 12);
  const Image t2 = random_image(147, 16, 12);
  const LossResult i2 = masked_l1(p2, t2, mask);
  const LossResult o2 = masked_l1(p2, t2, comp);
  const LossResult f2 = full_l1(p2, t2);
  CHECK(std::abs(i2.value + o2.value - f2.value) < 1e-12 * f2.value + 1e-15);
}

TEST_CASE("full l1 equals a scalar loop") {
  const Image pred = random_image(148, 9, 7);
  const Image target = random_image(149, 9, 7);
  const LossResult r = full_l1(pred, target);
  double expect = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    expect += std::abs(pred.data[i] - target.data[i]);
  }
  CHECK(r.value == doctest::Approx(expect).epsilon(1e-12));
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    CHECK(r.grad.data[i] == (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)));
  }
}

TEST_CASE("masked l1 gradient matches finite differences") {
  Image pred = random_image(150, 10, 8);
  const Image target = random_image(151, 10, 8);
  const Mask mask = random_mask(152, 10, 8);
  const LossResult r = masked_l1(pred, target, mask);

  Rng rng(153);
  const double eps = 1e-4;
  int checked = 0;
  while (checked < 25) {
    const std::size_t i = rng.below(pred.data.size());
    // Stay clear of the |x| kink so central differences are exact.
    if (std::abs(pred.data[i] - target.data[i]) < 0.01) continue;
    Image hi = pred, lo = pred;
    hi.data[i] += eps;
    lo.data[i] -= eps;
    const double fd = (masked_l1(hi, target, mask).value -
                       masked_l1(lo, target, mask).value) /
                      (2.0 * eps);
    if (r.grad.data[i] == 0.0) {
      CHECK(std::abs(fd) < 1e-7);
    } else {
      check_rel(r.grad.data[i], fd);
    }
    ++checked;
  }
}

TEST_CASE("track loss arithmetic and gradient") {
  TrackSet refs;
  refs.positions = {{Eigen::Vector3d(1.0, 2.0, 3.0),
                     Eigen::Vector3d(-1.0, 0.5, 2.0)}};
  refs.valid = {{1, 1}};
  std::vector<Eigen::Vector3d> means = refs.positions[0];
  TrackLossResult r = track_loss(means, refs, 0);
  CHECK(r.value == 0.0);
  CHECK(r.d_means[0].isZero(0.0));

  means[0] += Eigen::Vector3d(0.1, -0.2, 0.0);
  r = track_loss(means, refs, 0);
  CHECK(r.value == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(r.d_means[0] == Eigen::Vector3d(1.0, -1.0, 0.0));
  CHECK(r.d_means[1].isZero(0.0));

  // Finite differences on a random configuration.
  Rng rng(154);
  TrackSet set;
  set.positions.assign(1, {});
  set.valid.assign(1, {});
  std::vector<Eigen::Vector3d> pts;
  for (int g = 0; g < 5; ++g) {
    set.positions[0].emplace_back(rng.normal(), rng.normal(), rng.normal());
    set.valid[0].push_back(g == 3 ? 0 : 1);
    pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
  }
  r = track_loss(pts, set, 0);
  const double eps = 1e-6;
  for (int g = 0; g < 5; ++g) {
    for (int j = 0; j < 3; ++j) {
      auto hi = pts, lo = pts;
      hi[g][j] += eps;
      lo[g][j] -= eps;
      const double fd =
          (track_loss(hi, set, 0).value - track_loss(lo, set, 0).value) /
          (2.0 * eps);
      CHECK(std::abs(r.d_means[g][j] - fd) < 1e-9);
    }
  }
  CHECK(r.d_means[3].isZero(0.0));  // invalid reference contributes nothing

  // Broken one-to-one correspondence is a state error.
  pts.pop_back();
  CHECK_THROWS_AS(track_loss(pts, set, 0), std::logic_error);
  CHECK_THROWS_AS(track_loss(set.positions[0], set, 2), std::invalid_argument);
}

TEST_CASE("backprojection inverts the pinhole projection") {
  Camera cam;
  cam.fx = cam.fy = 20.0;
  cam.cx = cam.cy = 8.0;
  cam.width = cam.height = 16;

  // Identity pose, principal point, depth 2.
  DepthMap depth(16, 16);
  depth.set(8, 8, 2.0);
  std::vector<std::vector<Eigen::Vector2d>> tracks = {
      {Eigen::Vector2d(8.0, 8.0)}};
  TrackSet set =
      backproject_tracks(tracks, {depth}, {Pose{}}, cam);
  REQUIRE(set.valid[0][0] == 1);
  CHECK((set.positions[0][0] - Eigen::Vector3d(0.0, 0.0, 2.0)).norm() < 1e-12);

  // Round trip through a nontrivial pose.
  Rng rng(155);
  Pose pose;
  pose.rotation = so3_exp(Eigen::Vector3d(0.05, -0.1, 0.02));
  pose.translation = Eigen::Vector3d(0.1, -0.05, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector3d view(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                               rng.uniform(1.0, 3.0));
    const Eigen::Vector2d uv = cam.project(view);
    if (uv[0] < 0.0 || uv[0] > 15.0 || uv[1] < 0.0 || uv[1] > 15.0) continue;
    DepthMap d(16, 16);
    d.set(static_cast<int>(std::lround(uv[1])),
          static_cast<int>(std::lround(uv[0])), view[2]);
    TrackSet s = backproject_tracks({{uv}}, {d}, {pose}, cam);
    REQUIRE(s.valid[0][0] == 1);
    // World point maps back to the same pixel.
    const Eigen::Vector2d back = cam.project(pose.apply(s.positions[0][0]));
    CHECK((back - uv).norm() < 1e-6);
    // And equals the true world point for exact depth.
    CHECK((s.positions[0][0] - pose.inverse().apply(view)).norm() < 1e-9);
  }

  // Missing depth or out-of-frame pixels are flagged invalid.
  DepthMap hole(16, 16);
  TrackSet s = backproject_tracks(
      {{Eigen::Vector2d(4.0, 4.0), Eigen::Vector2d(40.0, 4.0)}}, {hole},
      {Pose{}}, cam);
  CHECK(s.valid[0][0] == 0);
  CHECK(s.valid[0][1] == 0);

  CHECK_THROWS_AS(backproject_tracks({{}, {}}, {hole}, {Pose{}}, cam),
                  std::invalid_argument);
}
