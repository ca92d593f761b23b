#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "blursplat/blur.hpp"
#include "blursplat/checkpoint.hpp"
#include "blursplat/losses.hpp"
#include "blursplat/render.hpp"
#include "blursplat/synth.hpp"
#include "blursplat/trainer.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace blursplat;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("blursplat_trainer_" + name);
  fs::remove_all(p);
  return p;
}

// Wall plus one moving textured cluster; mirrors the generator tests.
SceneScript train_script(std::uint64_t seed) {
  SceneScript s;
  s.seed = seed;
  s.frame_count = 6;
  s.width = 48;
  s.height = 48;
  s.blur_samples = 6;
  s.track_stride = 3;
  StaticBlobSpec wall;
  wall.center = {0.0, 0.0, 5.0};
  wall.extent = {6.0, 6.0, 0.2};
  wall.count = 60;
  wall.gaussian_scale = 0.22;
  wall.color = {0.4, 0.45, 0.5};
  s.static_blobs.push_back(wall);
  DynamicObjectSpec obj;
  obj.start = {-0.5, 0.0, 3.0};
  obj.velocity = {0.8, 0.0, 0.0};
  obj.count = 12;
  obj.radius = 0.25;
  obj.gaussian_scale = 0.07;
  obj.color = {0.9, 0.35, 0.2};
  obj.spin_rate = 2.0;
  s.dynamic_objects.push_back(obj);
  s.shake.translation = 0.02;
  s.shake.rotation_deg = 0.4;
  return s;
}

// One Gaussian sliding across an empty background at constant view
// depth, with no camera motion. The depth map is exact everywhere the
// object is seen, so backprojection reproduces the ground truth.
SceneScript flat_track_script(std::uint64_t seed) {
  SceneScript s;
  s.seed = seed;
  s.frame_count = 5;
  s.width = 48;
  s.height = 48;
  s.blur_samples = 4;
  s.track_stride = 2;
  DynamicObjectSpec obj;
  obj.start = {-0.3, 0.0, 3.0};
  obj.velocity = {0.6, 0.0, 0.0};
  obj.count = 1;
  obj.radius = 0.0;
  obj.gaussian_scale = 0.15;
  obj.spin_rate = 0.0;
  s.dynamic_objects.push_back(obj);
  return s;
}

TrainerConfig small_config() {
  TrainerConfig cfg;
  cfg.schedule = {2, 4, 8};
  cfg.pose_count = 4;
  cfg.field_depth = 2;
  cfg.field_width = 16;
  cfg.field_l_x = 2;
  cfg.field_l_t = 2;
  cfg.init_stride = 6;
  cfg.log_interval = 1;
  cfg.densify.interval = 100;  // off unless a test lowers it
  return cfg;
}

TrainData generate_and_load(const SceneScript& script, const fs::path& dir) {
  generate(script, dir);
  return load_train_data(dir);
}

// The frame train_step will draw next, given the trainer's RNG state.
int next_frame(const Trainer& tr) {
  if (tr.order_pos < tr.frame_order.size()) {
    return tr.frame_order[tr.order_pos];
  }
  Rng rng = tr.rng;
  std::vector<int> order(tr.data.frames.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  return order[0];
}

template <typename A, typename B>
bool bitwise_equal(const A& a, const B& b) {
  return (a.array() == b.array()).all();
}

bool same_cloud(const GaussianCloud& a, const GaussianCloud& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a.means[i], b.means[i])) return false;
    if (!bitwise_equal(a.log_scales[i], b.log_scales[i])) return false;
    if (!bitwise_equal(a.rotations[i].q.coeffs(), b.rotations[i].q.coeffs()))
      return false;
    if (a.opacity_logits[i] != b.opacity_logits[i]) return false;
    if (!bitwise_equal(a.colors[i], b.colors[i])) return false;
    if (a.tags[i] != b.tags[i]) return false;
  }
  return true;
}

bool same_deltas(const std::vector<PoseDeltaPair>& a,
                 const std::vector<PoseDeltaPair>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a[i].start, b[i].start)) return false;
    if (!bitwise_equal(a[i].end, b[i].end)) return false;
  }
  return true;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

// Sum of the track loss over all frames at the trainer's current
// deformed dynamic means; a frame-order-free progress measure.
double total_track(const Trainer& tr) {
  const std::vector<Eigen::Vector3d> dyn = [&] {
    std::vector<Eigen::Vector3d> v;
    for (std::size_t i = 0; i < tr.scene.size(); ++i) {
      if (tr.scene.tags[i] == GaussianTag::kDynamic)
        v.push_back(tr.scene.means[i]);
    }
    return v;
  }();
  double sum = 0.0;
  for (std::size_t f = 0; f < tr.data.frames.size(); ++f) {
    const std::vector<DeformOffsets> offsets =
        deform(tr.dynamic_field, dyn, tr.data.frames[f].t);
    std::vector<Eigen::Vector3d> deformed(dyn.size());
    for (std::size_t g = 0; g < dyn.size(); ++g) {
      deformed[g] = dyn[g] + offsets[g].dx;
    }
    sum += track_loss(deformed, tr.track_refs, static_cast<int>(f)).value;
  }
  return sum;
}

}  // namespace

TEST_CASE("loader mirrors the generated dataset") {
  const fs::path dir = scratch_dir("load");
  const SceneScript script = train_script(211);
  const DatasetManifest manifest = generate(script, dir);
  const TrainData data = load_train_data(dir);

  CHECK(data.frames.size() == static_cast<std::size_t>(script.frame_count));
  CHECK(data.canonical_frame == script.frame_count / 2);
  CHECK(data.track_stride == script.track_stride);
  CHECK(data.cam.width == script.width);

  const TrackTable2d tracks = read_tracks_2d(dir / manifest.tracks_2d);
  REQUIRE(tracks.point_count() > 0);
  CHECK(data.track_points() == tracks.point_count());
  for (std::size_t f = 0; f < data.frames.size(); ++f) {
    const TrainFrame& frame = data.frames[f];
    CHECK(frame.index == static_cast<int>(f));
    CHECK(frame.t == manifest.frames[f].t);
    CHECK(frame.tau == manifest.frames[f].tau);
    CHECK(frame.blurry.width == script.width);
    CHECK(frame.depth.height == script.height);
    for (std::size_t p = 0; p < tracks.point_count(); ++p) {
      CHECK(bitwise_equal(frame.track_uv[p], tracks.uv[p][f]));
      CHECK(frame.track_visible[p] == tracks.visible[p][f]);
    }
  }
  // No pose noise requested, so the handed-out pose is the true mid pose.
  CHECK(bitwise_equal(data.frames[0].pose_base.translation,
                      manifest.frames[0].pose_mid.translation));
}

TEST_CASE("static seeding backprojects the strided background grid") {
  const fs::path dir = scratch_dir("seed_static");
  const TrainData data = generate_and_load(train_script(212), dir);
  TrainerConfig cfg = small_config();
  cfg.init_stride = 5;
  const Trainer tr = create_trainer(cfg, data);

  CHECK(tr.dynamic_count() == 0);
  CHECK(!tr.static_field.initialized());
  CHECK(!tr.dynamic_field.initialized());

  const TrainFrame& canon = data.frames[data.canonical_frame];
  const Pose world_from_cam = canon.pose_base.inverse();
  std::size_t expected = 0;
  std::size_t i = 0;
  for (int r = 0; r < data.cam.height; r += cfg.init_stride) {
    for (int c = 0; c < data.cam.width; c += cfg.init_stride) {
      if (canon.mask.at(r, c)) continue;
      const double z = canon.depth.at(r, c);
      if (!(z > 0.0)) continue;
      ++expected;
      REQUIRE(i < tr.scene.size());
      const Eigen::Vector3d pos =
          world_from_cam.apply(data.cam.unproject(c, r, z));
      CHECK((tr.scene.means[i] - pos).norm() < 1e-12);
      CHECK(bitwise_equal(tr.scene.colors[i], canon.blurry.rgb(r, c)));
      CHECK(tr.scene.opacity_logits[i] == logit(cfg.init_opacity));
      CHECK(tr.scene.tags[i] == GaussianTag::kStatic);
      // Isotropic size matching the seeding grid pitch at that depth.
      const double sigma = 0.5 * cfg.init_stride * z / data.cam.fx;
      CHECK(tr.scene.log_scales[i][0] ==
            doctest::Approx(std::log(sigma)).epsilon(1e-12));
      CHECK(tr.scene.log_scales[i][0] == tr.scene.log_scales[i][2]);
      ++i;
    }
  }
  CHECK(tr.scene.size() == expected);
  CHECK(expected > 20);
  CHECK(tr.opt_means.size() == 3 * expected);
  CHECK(tr.opt_rotations.size() == 4 * expected);
  CHECK(tr.opt_deltas.size() == 12 * data.frames.size());
  CHECK(tr.grad_accum.size() == expected);
  for (const PoseDeltaPair& d : tr.deltas) {
    CHECK(d.start.norm() == 0.0);
    CHECK(d.end.norm() == 0.0);
  }
}

TEST_CASE("stage one loss with zero deltas is the plain masked error") {
  const fs::path dir = scratch_dir("stage1_loss");
  const TrainData data = generate_and_load(train_script(213), dir);
  Trainer tr = create_trainer(small_config(), data);
  const int fi = next_frame(tr);
  const TrainFrame& frame = data.frames[fi];

  // All virtual poses coincide with the base pose while the deltas are
  // zero, so the blur prediction collapses to one sharp render.
  RenderOptions opts;
  opts.threads = 1;
  const Image sharp_render = render(tr.scene, frame.pose_base, data.cam, opts);
  const double oracle = masked_l1(sharp_render, frame.blurry, frame.mask).value;

  const double loss = train_step(&tr);
  CHECK(loss == doctest::Approx(oracle).epsilon(1e-9));
  CHECK(tr.iter == 1);
}

TEST_CASE("prediction for the scheduled frame reproduces the step loss") {
  const fs::path dir = scratch_dir("predict");
  const TrainData data = generate_and_load(train_script(214), dir);
  Trainer tr = create_trainer(small_config(), data);
  const Trainer before = tr;
  const int fi = next_frame(tr);
  const double loss = train_step(&tr);
  const Image pred = predict_frame(before, fi);
  CHECK(masked_l1(pred, data.frames[fi].blurry, data.frames[fi].mask).value ==
        loss);
  CHECK_THROWS_AS(predict_frame(tr, -1), std::invalid_argument);
  CHECK_THROWS_AS(render_frame(tr, 99), std::invalid_argument);
}

TEST_CASE("stage one ignores pixels under the dynamic mask") {
  const fs::path dir = scratch_dir("mask_isolation");
  const TrainData clean = generate_and_load(train_script(215), dir);
  TrainData tampered = clean;
  for (TrainFrame& f : tampered.frames) {
    for (int r = 0; r < f.blurry.height; ++r) {
      for (int c = 0; c < f.blurry.width; ++c) {
        if (f.mask.at(r, c)) f.blurry.set_rgb(r, c, {0.99, 0.0, 0.99});
      }
    }
  }
  Trainer a = create_trainer(small_config(), clean);
  Trainer b = create_trainer(small_config(), tampered);
  REQUIRE(same_cloud(a.scene, b.scene));
  const double la = train_step(&a);
  const double lb = train_step(&b);
  CHECK(la == lb);
  CHECK(same_cloud(a.scene, b.scene));
  CHECK(same_deltas(a.deltas, b.deltas));
}

TEST_CASE("dynamic seeding matches the track table and object bounds") {
  const fs::path dir = scratch_dir("seed_dynamic");
  const SceneScript script = train_script(216);
  const DatasetManifest manifest = generate(script, dir);
  const TrainData data = load_train_data(dir);
  Trainer tr = create_trainer(small_config(), data);
  const std::size_t statics = tr.static_count();
  enter_stage2(&tr);

  // One Gaussian per track point; every canonical entry backprojects.
  REQUIRE(data.track_points() > 2);
  CHECK(tr.dynamic_count() == data.track_points());
  CHECK(tr.static_count() == statics);
  CHECK(tr.track_refs.point_count() == tr.dynamic_count());
  CHECK(tr.track_refs.frame_count() == data.frames.size());
  CHECK(tr.dynamic_field.initialized());
  CHECK(tr.static_field.initialized());
  CHECK(tr.opt_means.size() == 3 * tr.scene.size());

  // Independent recount of the seeding rule: strided canonical-mask
  // pixels whose depth is owned by a dynamic Gaussian.
  const BuiltScene built = build_scene(script);
  const double t_c = script.frame_time(data.canonical_frame);
  const GaussianCloud cloud_c = scene_at(built, t_c);
  const Pose pose_c = camera_at(built, t_c);
  std::vector<double> dyn_z;
  for (std::size_t i = 0; i < cloud_c.size(); ++i) {
    if (cloud_c.tags[i] == GaussianTag::kDynamic) {
      dyn_z.push_back(pose_c.apply(cloud_c.means[i])[2]);
    }
  }
  const TrainFrame& canon = data.frames[data.canonical_frame];
  std::size_t expected = 0;
  for (int r = 0; r < data.cam.height; r += data.track_stride) {
    for (int c = 0; c < data.cam.width; c += data.track_stride) {
      if (!canon.mask_sharp.at(r, c)) continue;
      const double z = canon.depth.at(r, c);
      if (!(z > 0.0)) continue;
      // The file stores f32 depth, so match with an f32-sized tolerance.
      const bool dynamic_owner =
          std::any_of(dyn_z.begin(), dyn_z.end(),
                      [&](double w) { return std::abs(w - z) < 1e-4; });
      if (dynamic_owner) ++expected;
    }
  }
  CHECK(tr.dynamic_count() == expected);

  // Seeds stay inside the moving object's realized bounds plus 5%.
  const GaussianCloud gt = unpack_cloud(read_bspc((dir / manifest.gt_scene)));
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e30);
  Eigen::Vector3d hi = -lo;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.tags[i] != GaussianTag::kDynamic) continue;
    const Eigen::Vector3d margin =
        3.0 * gt.log_scales[i].array().exp().matrix();
    lo = lo.cwiseMin(gt.means[i] - margin);
    hi = hi.cwiseMax(gt.means[i] + margin);
  }
  const Eigen::Vector3d pad = 0.05 * (hi - lo);
  std::size_t k = 0;
  for (std::size_t i = 0; i < tr.scene.size(); ++i) {
    if (tr.scene.tags[i] != GaussianTag::kDynamic) continue;
    const Eigen::Vector3d& m = tr.scene.means[i];
    CHECK((m.array() >= (lo - pad).array()).all());
    CHECK((m.array() <= (hi + pad).array()).all());
    // Seed position is the stored canonical reference, exactly.
    CHECK(bitwise_equal(m, tr.track_refs.positions[data.canonical_frame][k]));
    ++k;
  }
}

TEST_CASE("backprojected references reproduce the true trajectories") {
  const fs::path dir = scratch_dir("refs_exact");
  const SceneScript script = flat_track_script(217);
  const DatasetManifest manifest = generate(script, dir);
  const TrainData data = load_train_data(dir);
  Trainer tr = create_trainer(small_config(), data);
  enter_stage2(&tr);

  const TrackTable3d gt = read_tracks_3d(dir / manifest.tracks_3d);
  REQUIRE(gt.point_count() == tr.track_refs.point_count());
  REQUIRE(gt.point_count() > 2);
  std::size_t checked = 0;
  for (std::size_t f = 0; f < data.frames.size(); ++f) {
    for (std::size_t p = 0; p < gt.point_count(); ++p) {
      CHECK(tr.track_refs.valid[f][p] == data.frames[f].track_visible[p]);
      if (!tr.track_refs.valid[f][p]) continue;
      CHECK((tr.track_refs.positions[f][p] - gt.xyz[p][f]).norm() < 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("a dataset without moving objects seeds no dynamics") {
  const fs::path dir = scratch_dir("no_dynamics");
  SceneScript script = train_script(218);
  script.dynamic_objects.clear();
  const TrainData data = generate_and_load(script, dir);
  CHECK(data.track_points() == 0);
  Trainer tr = create_trainer(small_config(), data);
  enter_stage2(&tr);
  CHECK(tr.dynamic_count() == 0);
  CHECK(tr.stage2_ready);
  // The warning lands in the pending log records.
  bool warned = false;
  for (const std::string& line : tr.log_lines) {
    warned = warned || line.find("warning") != std::string::npos;
  }
  CHECK(warned);
}

TEST_CASE("stage two behavior around the boundary") {
  const fs::path dir = scratch_dir("stage2");
  const TrainData data = generate_and_load(train_script(219), dir);
  TrainerConfig cfg = small_config();
  cfg.schedule = {2, 6, 10};
  cfg.densify.interval = 2;
  cfg.densify.until = 8;
  cfg.densify.grad_threshold = 1e9;  // isolate counts from densify growth
  Trainer tr = create_trainer(cfg, data);

  for (int i = 0; i < 2; ++i) {
    CHECK(tr.stage() == 1);
    CHECK(tr.dynamic_count() == 0);
    CHECK(!tr.static_field.initialized());
    train_step(&tr);
  }
  const Trainer at_boundary = tr;  // iter == 2, stage 2 not yet entered
  CHECK(!at_boundary.stage2_ready);

  // Pose deltas move during stage 1 and freeze afterwards by default.
  CHECK(!same_deltas(tr.deltas, std::vector<PoseDeltaPair>(
                                    data.frames.size(), PoseDeltaPair{})));
  train_step(&tr);
  CHECK(tr.stage2_ready);
  CHECK(tr.dynamic_count() == data.track_points());
  CHECK(same_deltas(tr.deltas, at_boundary.deltas));

  // With the track weight zeroed, the boundary step's loss is exactly
  // the full-image error of the blur synthesis, since the freshly
  // created fields start at the identity.
  {
    Trainer t0 = at_boundary;
    t0.cfg.lambda_track = 0.0;
    Trainer seeded = at_boundary;
    enter_stage2(&seeded);
    const int fi = next_frame(t0);
    const double loss = train_step(&t0);
    const TrainFrame& frame = data.frames[fi];
    ExposureWindow w;
    w.center = frame.t;
    w.duration = frame.tau;
    w.segments = cfg.pose_count - 1;
    RenderOptions opts;
    opts.threads = 1;
    const Image pred = synth_blur_dynamic(
        make_sample_set(frame.pose_base, t0.deltas[fi], w), seeded.scene,
        FieldPair{}, data.cam, opts);
    CHECK(loss == full_l1(pred, frame.blurry).value);
  }

  // The dynamic population is frozen until the warmup window closes,
  // densification passes included.
  const std::size_t seeded_count = tr.dynamic_count();
  while (tr.iter < 6) {
    train_step(&tr);
    if (tr.iter % cfg.densify.interval == 0) densify_and_prune(&tr);
    CHECK(tr.dynamic_count() == seeded_count);
  }
  while (tr.iter < 10) train_step(&tr);
  CHECK_THROWS_AS(train_step(&tr), std::logic_error);

  // Numeric faults surface as NumericError.
  Trainer poisoned = at_boundary;
  for (auto& c : poisoned.scene.colors) {
    c = Eigen::Vector3d::Constant(std::nan(""));
  }
  CHECK_THROWS_AS(train_step(&poisoned), NumericError);
}

TEST_CASE("track warmup pulls the deformed means toward the references") {
  const fs::path dir = scratch_dir("warmup");
  const TrainData data = generate_and_load(train_script(220), dir);
  TrainerConfig cfg = small_config();
  cfg.schedule = {4, 24, 30};
  cfg.densify.grad_threshold = 1e9;
  // The photometric term sums thousands of pixels while the track term
  // sums a few dozen points, so the toy run weights the tracks up to
  // make their pull visible within a short warmup.
  cfg.lambda_track = 50.0;
  Trainer tr = create_trainer(cfg, data);
  while (tr.iter < 5) train_step(&tr);  // one step into the warmup
  const double before = total_track(tr);
  while (tr.iter < 24) train_step(&tr);
  const double after = total_track(tr);
  CHECK(after < before);
}

TEST_CASE("training reduces the photometric loss") {
  const fs::path dir = scratch_dir("descent");
  SceneScript script = train_script(221);
  script.pose_noise_deg = 0.3;
  script.pose_noise_t = 0.005;
  const TrainData data = generate_and_load(script, dir);
  TrainerConfig cfg = small_config();
  cfg.schedule = {15, 30, 60};
  cfg.densify.grad_threshold = 1e9;
  Trainer tr = create_trainer(cfg, data);

  const std::size_t frames = data.frames.size();
  std::vector<double> epoch_means;
  double acc = 0.0;
  int in_epoch = 0;
  for (int i = 0; i < 60; ++i) {
    acc += train_step(&tr);
    if (++in_epoch == static_cast<int>(frames)) {
      epoch_means.push_back(acc / frames);
      acc = 0.0;
      in_epoch = 0;
    }
  }
  REQUIRE(epoch_means.size() == 10);
  // Stage 1 epochs (masked loss) and stage 2 epochs (full loss) are not
  // comparable to each other, so compare within each stage.
  CHECK(epoch_means[1] < epoch_means[0]);
  CHECK(epoch_means.back() < 0.98 * epoch_means[5]);
  for (double m : epoch_means) CHECK(std::isfinite(m));
}

TEST_CASE("densify splits, clones and culls by the configured rules") {
  TrainerConfig cfg = small_config();
  cfg.densify.grad_threshold = 1.0;
  cfg.densify.split_scale = 0.08;
  cfg.densify.min_count = 1;
  cfg.schedule = {500, 1500, 4000};

  const auto make = [&](const Eigen::Vector3d& log_scale, double logit_op,
                        double accum) {
    Trainer tr;
    tr.cfg = cfg;
    tr.scene.add({0.0, 0.0, 3.0}, log_scale, Rotation{}, logit_op,
                 {0.8, 0.3, 0.2}, GaussianTag::kStatic);
    tr.opt_means.init(3);
    tr.opt_log_scales.init(3);
    tr.opt_rotations.init(4);
    tr.opt_opacities.init(1);
    tr.opt_colors.init(3);
    tr.grad_accum = {accum};
    tr.accum_steps = 1;
    return tr;
  };

  SUBCASE("large high-gradient Gaussians split into two children") {
    const Eigen::Vector3d parent_scale(std::log(0.2), std::log(0.05),
                                       std::log(0.05));
    Trainer tr = make(parent_scale, logit(0.8), 10.0);
    Camera cam;
    cam.width = 32;
    cam.height = 32;
    cam.fx = cam.fy = 32.0;
    cam.cx = cam.cy = 16.0;
    RenderOptions opts;
    const Image before = render(tr.scene, Pose{}, cam, opts);

    densify_and_prune(&tr);
    REQUIRE(tr.scene.size() == 2);
    CHECK(tr.opt_means.size() == 6);
    CHECK(tr.opt_means.m[0] == 0.0);
    CHECK(tr.grad_accum == std::vector<double>{0.0, 0.0});
    CHECK(tr.accum_steps == 0);
    for (int i : {0, 1}) {
      CHECK(bitwise_equal(tr.scene.log_scales[i],
                          (parent_scale.array() - std::log(1.6)).matrix()));
      CHECK(std::abs(tr.scene.means[i][0]) ==
            doctest::Approx(0.5 * 0.2).epsilon(1e-12));
      CHECK(tr.scene.means[i][2] == 3.0);
    }
    CHECK(tr.scene.means[0][0] * tr.scene.means[1][0] < 0.0);

    // Splitting approximately conserves the rendered appearance.
    const Image after = render(tr.scene, Pose{}, cam, opts);
    double diff = 0.0;
    for (std::size_t i = 0; i < before.data.size(); ++i) {
      diff += std::abs(before.data[i] - after.data[i]);
    }
    CHECK(diff / before.data.size() < 0.05);
  }

  SUBCASE("small high-gradient Gaussians clone in place") {
    Trainer tr = make(Eigen::Vector3d::Constant(std::log(0.03)), logit(0.8),
                      10.0);
    tr.opt_means.m = {7.0, 8.0, 9.0};  // parent moments must survive
    densify_and_prune(&tr);
    REQUIRE(tr.scene.size() == 2);
    CHECK(bitwise_equal(tr.scene.means[0], tr.scene.means[1]));
    CHECK(bitwise_equal(tr.scene.log_scales[0], tr.scene.log_scales[1]));
    CHECK(tr.scene.opacity_logits[0] == tr.scene.opacity_logits[1]);
    CHECK(tr.opt_means.m[0] == 7.0);
    CHECK(tr.opt_means.m[3] == 0.0);
  }

  SUBCASE("transparent Gaussians are culled with their moments") {
    Trainer tr = make(Eigen::Vector3d::Constant(std::log(0.03)), logit(0.001),
                      0.0);
    tr.scene.add({1.0, 0.0, 3.0}, Eigen::Vector3d::Constant(std::log(0.03)),
                 Rotation{}, logit(0.9), {0.1, 0.2, 0.3},
                 GaussianTag::kStatic);
    tr.opt_means.append(3);
    tr.opt_log_scales.append(3);
    tr.opt_rotations.append(4);
    tr.opt_opacities.append(1);
    tr.opt_colors.append(3);
    tr.grad_accum = {0.0, 0.0};
    tr.opt_means.m = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    densify_and_prune(&tr);
    REQUIRE(tr.scene.size() == 1);
    CHECK(tr.scene.opacity_logits[0] == logit(0.9));
    CHECK(tr.opt_means.m == std::vector<double>{4.0, 5.0, 6.0});
  }

  SUBCASE("below-threshold scenes pass through untouched") {
    Trainer tr = make(Eigen::Vector3d::Constant(std::log(0.2)), logit(0.8),
                      0.5);
    const GaussianCloud before = tr.scene;
    densify_and_prune(&tr);
    CHECK(same_cloud(tr.scene, before));
    CHECK(tr.opt_means.size() == 3);
  }

  SUBCASE("dynamic Gaussians are exempt during the track warmup") {
    Trainer tr = make(Eigen::Vector3d::Constant(std::log(0.2)), logit(0.8),
                      10.0);
    tr.scene.tags[0] = GaussianTag::kDynamic;
    tr.iter = 700;  // inside [500, 1500)
    densify_and_prune(&tr);
    CHECK(tr.scene.size() == 1);
    tr.grad_accum = {10.0};
    tr.accum_steps = 1;
    tr.iter = 1600;  // warmup over; the same Gaussian now splits
    densify_and_prune(&tr);
    CHECK(tr.scene.size() == 2);
  }
}

TEST_CASE("checkpoint resume continues bit for bit") {
  const fs::path dir = scratch_dir("resume");
  const TrainData data = generate_and_load(train_script(222), dir);
  TrainerConfig cfg = small_config();
  cfg.schedule = {2, 4, 8};
  cfg.checkpoint_interval = 5;
  cfg.densify.interval = 3;
  cfg.densify.until = 4;

  const fs::path out_a = scratch_dir("resume_a");
  Trainer a = create_trainer(cfg, data);
  run_training(&a, out_a, "echo");
  REQUIRE(fs::exists(out_a / "checkpoint_000005.bspc"));
  REQUIRE(fs::exists(out_a / "checkpoint_final.bspc"));
  CHECK(checkpoint_config_echo((out_a / "checkpoint_final.bspc").string()) ==
        "echo");

  const fs::path out_b = scratch_dir("resume_b");
  Trainer b = create_trainer(cfg, load_train_data(dir));
  load_checkpoint(&b, (out_a / "checkpoint_000005.bspc").string());
  CHECK(b.iter == 5);
  CHECK(b.stage2_ready);
  CHECK(same_cloud(a.scene, b.scene) == false);  // b is 3 steps behind
  run_training(&b, out_b, "echo");

  CHECK(file_bytes(out_a / "checkpoint_final.bspc") ==
        file_bytes(out_b / "checkpoint_final.bspc"));
  CHECK(fs::exists(out_a / "train_log.jsonl"));
}

TEST_CASE("identical configs give identical checkpoints across threads") {
  const fs::path dir = scratch_dir("determinism");
  const TrainData data = generate_and_load(train_script(223), dir);
  TrainerConfig cfg = small_config();
  cfg.schedule = {2, 4, 6};

  const fs::path out_a = scratch_dir("det_a");
  Trainer a = create_trainer(cfg, data);
  run_training(&a, out_a, "cfg");

  cfg.threads = 2;
  const fs::path out_b = scratch_dir("det_b");
  Trainer b = create_trainer(cfg, load_train_data(dir));
  run_training(&b, out_b, "cfg");

  CHECK(file_bytes(out_a / "checkpoint_final.bspc") ==
        file_bytes(out_b / "checkpoint_final.bspc"));
}

TEST_CASE("ablation toggles shape the sample set and the losses") {
  const fs::path dir = scratch_dir("ablations");
  const TrainData data = generate_and_load(train_script(224), dir);

  SUBCASE("without camera blur the deltas are ignored and frozen") {
    TrainerConfig cfg = small_config();
    cfg.use_camera_blur = false;
    Trainer tr = create_trainer(cfg, data);
    Trainer moved = tr;
    moved.deltas[0].start[3] = 0.5;  // large translation delta
    moved.deltas[0].end[3] = 0.5;
    CHECK(predict_frame(tr, 0).data == predict_frame(moved, 0).data);
    train_step(&tr);
    for (const PoseDeltaPair& d : tr.deltas) {
      CHECK(d.start.norm() == 0.0);
      CHECK(d.end.norm() == 0.0);
    }
  }

  SUBCASE("with both blur axes off the prediction is one sharp render") {
    TrainerConfig cfg = small_config();
    cfg.use_camera_blur = false;
    cfg.use_object_blur = false;
    Trainer tr = create_trainer(cfg, data);
    RenderOptions opts;
    opts.threads = 1;
    const Image direct = render(tr.scene, data.frames[2].pose_base, data.cam,
                                opts);
    CHECK(predict_frame(tr, 2).data == direct.data);
  }

  SUBCASE("without the static field only the dynamic field is created") {
    TrainerConfig cfg = small_config();
    cfg.use_static_field = false;
    Trainer tr = create_trainer(cfg, data);
    enter_stage2(&tr);
    CHECK(!tr.static_field.initialized());
    CHECK(tr.dynamic_field.initialized());
    CHECK(tr.opt_static_field.size() == 0);
  }

  SUBCASE("without the track loss the warmup term is absent") {
    TrainerConfig cfg = small_config();
    cfg.use_track_loss = false;
    cfg.schedule = {1, 4, 6};
    Trainer tr = create_trainer(cfg, data);
    train_step(&tr);
    const Trainer at_boundary = tr;
    Trainer seeded = at_boundary;
    enter_stage2(&seeded);
    const int fi = next_frame(tr);
    const double loss = train_step(&tr);
    CHECK(loss ==
          full_l1(predict_frame(seeded, fi), data.frames[fi].blurry).value);
  }
}

TEST_CASE("evaluation reports one row per frame plus the aggregate") {
  const fs::path dir = scratch_dir("eval");
  const TrainData data = generate_and_load(train_script(225), dir);
  Trainer tr = create_trainer(small_config(), data);
  const MetricReport report = evaluate(tr);
  REQUIRE(report.rows.size() == data.frames.size());
  double mean_psnr = 0.0;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const FrameMetrics& row = report.rows[i];
    CHECK(row.frame == static_cast<int>(i));
    CHECK(row.psnr > 0.0);
    CHECK(row.ssim <= 1.0);
    CHECK(std::isfinite(row.lv));
    CHECK(std::isfinite(row.psnr_dynamic));
    mean_psnr += row.psnr;
  }
  CHECK(report.aggregate.psnr ==
        doctest::Approx(mean_psnr / report.rows.size()).epsilon(1e-12));

  const nlohmann::json doc = nlohmann::json::parse(metric_report_json(report));
  CHECK(doc.at("frames").size() == data.frames.size());
  CHECK(doc.at("aggregate").at("psnr").get<double>() ==
        doctest::Approx(report.aggregate.psnr).epsilon(1e-12));
}
