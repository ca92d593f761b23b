#include "blursplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "blursplat/checkpoint.hpp"
#include "blursplat/io.hpp"
#include "blursplat/metrics.hpp"
#include "blursplat/synth.hpp"

namespace blursplat {
namespace {

static_assert(sizeof(Eigen::Vector3d) == 3 * sizeof(double));
static_assert(sizeof(Eigen::Vector4d) == 4 * sizeof(double));

[[noreturn]] void config_error(const std::string& msg) {
  throw std::invalid_argument("trainer config: " + msg);
}

std::vector<Eigen::Vector3d> means_of(const GaussianCloud& cloud,
                                      GaussianTag tag) {
  std::vector<Eigen::Vector3d> means;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.tags[i] == tag) means.push_back(cloud.means[i]);
  }
  return means;
}

RenderOptions render_options(const TrainerConfig& cfg) {
  RenderOptions opts;
  opts.transmittance_floor = cfg.transmittance_floor;
  opts.threads = cfg.threads;
  return opts;
}

ExposureWindow frame_window(const TrainerConfig& cfg, const TrainFrame& f) {
  ExposureWindow w;
  w.center = f.t;
  w.duration = f.tau;
  w.segments = cfg.pose_count - 1;
  return w;
}

// Ablation-aware sample set. The full method interpolates poses across
// the corrected exposure and walks the timestamp grid; either axis can
// be collapsed, and collapsing both leaves a single sharp sample.
VirtualSampleSet build_samples(const TrainerConfig& cfg, const TrainFrame& f,
                               const PoseDeltaPair& deltas) {
  VirtualSampleSet set;
  if (!cfg.use_camera_blur && !cfg.use_object_blur) {
    set.poses = {f.pose_base};
    set.timestamps = {f.t};
    return set;
  }
  const ExposureWindow w = frame_window(cfg, f).clamped();
  if (cfg.use_camera_blur) {
    set.poses = exposure_pose_sequence(f.pose_base, deltas, w.segments);
  } else {
    set.poses.assign(w.segments + 1, f.pose_base);
  }
  if (cfg.use_object_blur) {
    set.timestamps = virtual_timestamps(w);
  } else {
    set.timestamps.assign(w.segments + 1, f.t);
  }
  return set;
}

FieldPair active_fields(const Trainer& tr) {
  FieldPair fields;
  if (tr.static_field.initialized()) fields.static_field = &tr.static_field;
  if (tr.dynamic_field.initialized() && tr.dynamic_count() > 0) {
    fields.dynamic_field = &tr.dynamic_field;
  }
  return fields;
}

std::size_t field_param_count(const DeformField& f) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < f.weights.size(); ++l) {
    n += static_cast<std::size_t>(f.weights[l].size()) +
         static_cast<std::size_t>(f.biases[l].size());
  }
  return n;
}

// Field parameters and their gradients share one flat layout: per
// layer, weights (Eigen storage order) then biases.
void field_gather(const DeformField& f, std::vector<double>* out) {
  out->clear();
  for (std::size_t l = 0; l < f.weights.size(); ++l) {
    out->insert(out->end(), f.weights[l].data(),
                f.weights[l].data() + f.weights[l].size());
    out->insert(out->end(), f.biases[l].data(),
                f.biases[l].data() + f.biases[l].size());
  }
}

void field_scatter(const std::vector<double>& flat, DeformField* f) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < f->weights.size(); ++l) {
    std::copy(flat.begin() + off, flat.begin() + off + f->weights[l].size(),
              f->weights[l].data());
    off += f->weights[l].size();
    std::copy(flat.begin() + off, flat.begin() + off + f->biases[l].size(),
              f->biases[l].data());
    off += f->biases[l].size();
  }
}

void grad_gather(const DeformFieldGrad& g, std::vector<double>* out) {
  out->clear();
  for (std::size_t l = 0; l < g.d_weights.size(); ++l) {
    out->insert(out->end(), g.d_weights[l].data(),
                g.d_weights[l].data() + g.d_weights[l].size());
    out->insert(out->end(), g.d_biases[l].data(),
                g.d_biases[l].data() + g.d_biases[l].size());
  }
}

void field_adam(AdamSlot* slot, DeformField* field,
                const DeformFieldGrad& grad, double lr, int step,
                const AdamConfig& cfg) {
  std::vector<double> params, grads;
  field_gather(*field, &params);
  grad_gather(grad, &grads);
  adam_step(slot, params.data(), grads.data(), params.size(), lr, step, cfg);
  field_scatter(params, field);
}

void append_log(Trainer* tr, const nlohmann::json& doc) {
  tr->log_lines.push_back(doc.dump());
}

void warn(Trainer* tr, const std::string& msg) {
  nlohmann::json doc;
  doc["iter"] = tr->iter;
  doc["warning"] = msg;
  append_log(tr, doc);
  std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

int densify_until(const TrainerConfig& cfg) {
  return cfg.densify.until > 0 ? cfg.densify.until
                               : cfg.schedule.iters_total / 2;
}

bool in_track_warmup(const TrainerConfig& cfg, int iter) {
  return iter >= cfg.schedule.iters_stage1 &&
         iter < cfg.schedule.iters_track_warmup_end;
}

Eigen::Vector3d image_pixel(const Image& img, double u, double v) {
  const int c = std::clamp(static_cast<int>(std::lround(u)), 0, img.width - 1);
  const int r =
      std::clamp(static_cast<int>(std::lround(v)), 0, img.height - 1);
  return img.rgb(r, c);
}

void check_frame_index(const Trainer& tr, int frame, const char* what) {
  if (frame < 0 || static_cast<std::size_t>(frame) >= tr.data.frames.size()) {
    throw std::invalid_argument(std::string(what) + ": frame out of range");
  }
}

}  // namespace

void StageSchedule::validate() const {
  if (!(0 < iters_stage1 && iters_stage1 < iters_track_warmup_end &&
        iters_track_warmup_end < iters_total)) {
    config_error("schedule must satisfy 0 < stage1 < warmup_end < total");
  }
}

void TrainerConfig::validate() const {
  schedule.validate();
  if (pose_count < 1) config_error("pose_count must be at least 1");
  if (use_camera_blur || use_object_blur) {
    if (pose_count < 2) {
      config_error("pose_count must be at least 2 when blur is modeled");
    }
  }
  if (field_depth < 2) config_error("field_depth must be at least 2");
  if (field_width < 1) config_error("field_width must be positive");
  if (field_l_x < 0 || field_l_t < 0) {
    config_error("encoding band counts cannot be negative");
  }
  if (init_stride < 1) config_error("init_stride must be positive");
  if (!(init_opacity > 0.0 && init_opacity < 1.0)) {
    config_error("init_opacity must lie in (0, 1)");
  }
  if (lambda_track < 0.0) config_error("lambda_track cannot be negative");
  if (threads < 1) config_error("threads must be positive");
  if (log_interval < 1) config_error("log_interval must be positive");
  if (checkpoint_interval < 0) {
    config_error("checkpoint_interval cannot be negative");
  }
  if (densify.interval < 1) config_error("densify interval must be positive");
  if (!(densify.opacity_floor > 0.0 && densify.opacity_floor < 1.0)) {
    config_error("opacity floor must lie in (0, 1)");
  }
  if (densify.grad_threshold < 0.0 || densify.split_scale <= 0.0) {
    config_error("densify thresholds must be positive");
  }
  if (!(transmittance_floor > 0.0 && transmittance_floor < 1.0)) {
    config_error("transmittance_floor must lie in (0, 1)");
  }
}

void TrainData::validate() const {
  if (frames.empty()) {
    throw std::invalid_argument("train data: no frames");
  }
  cam.validate();
  if (canonical_frame < 0 ||
      static_cast<std::size_t>(canonical_frame) >= frames.size()) {
    throw std::invalid_argument("train data: canonical frame out of range");
  }
  if (track_stride < 1) {
    throw std::invalid_argument("train data: track stride must be positive");
  }
  const std::size_t points = frames.front().track_uv.size();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const TrainFrame& f = frames[i];
    if (f.index != static_cast<int>(i)) {
      throw std::invalid_argument("train data: frame indices out of order");
    }
    if (!(f.tau > 0.0) || !(f.t >= 0.0 && f.t <= 1.0)) {
      throw std::invalid_argument("train data: bad frame timing");
    }
    const bool dims_ok =
        f.blurry.width == cam.width && f.blurry.height == cam.height &&
        f.sharp.width == cam.width && f.sharp.height == cam.height &&
        f.mask.width == cam.width && f.mask.height == cam.height &&
        f.mask_sharp.width == cam.width && f.mask_sharp.height == cam.height &&
        f.depth.width == cam.width && f.depth.height == cam.height;
    if (!dims_ok) {
      throw std::invalid_argument("train data: frame buffer dims mismatch");
    }
    if (f.track_uv.size() != points || f.track_visible.size() != points) {
      throw std::invalid_argument("train data: ragged track table");
    }
  }
}

TrainData load_train_data(const std::filesystem::path& dir) {
  const DatasetManifest manifest = load_manifest(dir / "manifest.json");
  TrainData data;
  data.cam = manifest.camera;
  data.canonical_frame = manifest.canonical_frame;
  data.track_stride = manifest.track_stride;
  data.frames.resize(manifest.frames.size());
  for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
    const FrameRecord& rec = manifest.frames[i];
    TrainFrame& f = data.frames[i];
    f.index = rec.index;
    f.t = rec.t;
    f.tau = rec.tau;
    f.pose_base = rec.pose_init;
    f.blurry = read_image_npy(dir / rec.blurry);
    f.sharp = read_image_npy(dir / rec.sharp);
    f.mask = read_mask_npy(dir / rec.mask);
    f.mask_sharp = read_mask_npy(dir / rec.mask_sharp);
    f.depth = read_depth_npy(dir / rec.depth);
  }
  const TrackTable2d tracks = read_tracks_2d(dir / manifest.tracks_2d);
  if (tracks.point_count() > 0 &&
      tracks.frame_count() != data.frames.size()) {
    throw std::invalid_argument("train data: track frame count mismatch");
  }
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    TrainFrame& f = data.frames[i];
    f.track_uv.resize(tracks.point_count());
    f.track_visible.resize(tracks.point_count());
    for (std::size_t p = 0; p < tracks.point_count(); ++p) {
      f.track_uv[p] = tracks.uv[p][i];
      f.track_visible[p] = tracks.visible[p][i];
    }
  }
  data.validate();
  return data;
}

Pose mid_pose(const Pose& base, const PoseDeltaPair& deltas) {
  return exposure_pose_sequence(base, deltas, 2)[1];
}

GaussianCloud deformed_scene(const Trainer& tr, double t) {
  GaussianCloud cloud = tr.scene;
  const FieldPair fields = active_fields(tr);
  if (fields.static_field != nullptr) {
    apply_offsets(&cloud, GaussianTag::kStatic,
                  deform(*fields.static_field,
                         means_of(tr.scene, GaussianTag::kStatic), t));
  }
  if (fields.dynamic_field != nullptr) {
    apply_offsets(&cloud, GaussianTag::kDynamic,
                  deform(*fields.dynamic_field,
                         means_of(tr.scene, GaussianTag::kDynamic), t));
  }
  return cloud;
}

Pose corrected_mid_pose(const Trainer& tr, int frame) {
  check_frame_index(tr, frame, "corrected_mid_pose");
  return mid_pose(tr.data.frames[frame].pose_base, tr.deltas[frame]);
}

Trainer create_trainer(const TrainerConfig& cfg, TrainData data) {
  cfg.validate();
  data.validate();
  Trainer tr;
  tr.cfg = cfg;
  tr.data = std::move(data);
  tr.rng = Rng(cfg.seed);
  tr.deltas.assign(tr.data.frames.size(), PoseDeltaPair{});

  // Static seeding: backproject a strided pixel grid of the canonical
  // frame, skipping its dynamic mask, at the initial pose estimate.
  const TrainFrame& canon = tr.data.frames[tr.data.canonical_frame];
  const Pose world_from_cam = canon.pose_base.inverse();
  for (int r = 0; r < tr.data.cam.height; r += cfg.init_stride) {
    for (int c = 0; c < tr.data.cam.width; c += cfg.init_stride) {
      if (canon.mask.at(r, c)) continue;
      const double z = canon.depth.at(r, c);
      if (!(z > 0.0)) continue;
      const Eigen::Vector3d pos =
          world_from_cam.apply(tr.data.cam.unproject(c, r, z));
      const double sigma = 0.5 * cfg.init_stride * z / tr.data.cam.fx;
      tr.scene.add(pos, Eigen::Vector3d::Constant(std::log(sigma)),
                   Rotation{}, logit(cfg.init_opacity), canon.blurry.rgb(r, c),
                   GaussianTag::kStatic);
    }
  }
  if (tr.scene.empty()) {
    warn(&tr, "static seeding produced no Gaussians (no depth coverage)");
  }

  const std::size_t n = tr.scene.size();
  tr.opt_means.init(3 * n);
  tr.opt_log_scales.init(3 * n);
  tr.opt_rotations.init(4 * n);
  tr.opt_opacities.init(n);
  tr.opt_colors.init(3 * n);
  tr.opt_deltas.init(12 * tr.data.frames.size());
  tr.grad_accum.assign(n, 0.0);
  return tr;
}

void enter_stage2(Trainer* tr) {
  if (tr->stage2_ready) return;
  const TrainerConfig& cfg = tr->cfg;
  const std::size_t frames = tr->data.frames.size();

  // Backproject the 2D tracks through the depth oracle with the
  // stage-1-optimized mid poses; these references stay fixed.
  std::vector<std::vector<Eigen::Vector2d>> tracks2d(frames);
  std::vector<DepthMap> depths(frames);
  std::vector<Pose> mids(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    tracks2d[i] = tr->data.frames[i].track_uv;
    depths[i] = tr->data.frames[i].depth;
    mids[i] = mid_pose(tr->data.frames[i].pose_base, tr->deltas[i]);
  }
  TrackSet refs = backproject_tracks(tracks2d, depths, mids, tr->data.cam);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t p = 0; p < tr->data.track_points(); ++p) {
      if (!tr->data.frames[i].track_visible[p]) refs.valid[i][p] = 0;
    }
  }

  // One dynamic Gaussian per track point, at the point's canonical
  // backprojection. Points with no valid canonical entry cannot seed and
  // drop out of the correspondence entirely.
  const int c = tr->data.canonical_frame;
  const TrainFrame& canon = tr->data.frames[c];
  std::vector<std::size_t> kept;
  for (std::size_t p = 0; p < tr->data.track_points(); ++p) {
    if (refs.valid[c][p]) kept.push_back(p);
  }
  if (kept.size() != tr->data.track_points()) {
    warn(tr, "dropped " +
                 std::to_string(tr->data.track_points() - kept.size()) +
                 " track points without a canonical backprojection");
  }
  if (kept.empty()) {
    warn(tr, "no dynamic pixels to seed; zero dynamic Gaussians");
  }
  tr->track_refs.positions.assign(frames, {});
  tr->track_refs.valid.assign(frames, {});
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t p : kept) {
      tr->track_refs.positions[i].push_back(refs.positions[i][p]);
      tr->track_refs.valid[i].push_back(refs.valid[i][p]);
    }
  }

  for (std::size_t p : kept) {
    const Eigen::Vector2d& uv = canon.track_uv[p];
    const int pr =
        std::clamp(static_cast<int>(std::lround(uv[1])), 0,
                   tr->data.cam.height - 1);
    const int pc = std::clamp(static_cast<int>(std::lround(uv[0])), 0,
                              tr->data.cam.width - 1);
    const double z = canon.depth.at(pr, pc);
    const double sigma =
        0.5 * tr->data.track_stride * std::max(z, 0.1) / tr->data.cam.fx;
    tr->scene.add(refs.positions[c][p],
                  Eigen::Vector3d::Constant(std::log(sigma)), Rotation{},
                  logit(cfg.init_opacity), image_pixel(canon.blurry, uv[0], uv[1]),
                  GaussianTag::kDynamic);
  }
  const std::size_t added = kept.size();
  tr->opt_means.append(3 * added);
  tr->opt_log_scales.append(3 * added);
  tr->opt_rotations.append(4 * added);
  tr->opt_opacities.append(added);
  tr->opt_colors.append(3 * added);
  tr->grad_accum.resize(tr->scene.size(), 0.0);

  tr->dynamic_field =
      DeformField::create(GaussianTag::kDynamic, cfg.field_depth,
                          cfg.field_width, cfg.field_l_x, cfg.field_l_t,
                          cfg.seed + 7919);
  tr->opt_dynamic_field.init(field_param_count(tr->dynamic_field));
  if (cfg.use_static_field) {
    tr->static_field =
        DeformField::create(GaussianTag::kStatic, cfg.field_depth,
                            cfg.field_width, cfg.field_l_x, cfg.field_l_t,
                            cfg.seed + 104729);
    tr->opt_static_field.init(field_param_count(tr->static_field));
  }
  tr->stage2_ready = true;

  nlohmann::json doc;
  doc["iter"] = tr->iter;
  doc["event"] = "stage2";
  doc["dynamic"] = tr->dynamic_count();
  doc["static"] = tr->static_count();
  append_log(tr, doc);
}

double train_step(Trainer* tr) {
  const TrainerConfig& cfg = tr->cfg;
  if (tr->iter >= cfg.schedule.iters_total) {
    throw std::logic_error("train_step: schedule exhausted");
  }
  if (tr->stage() == 2 && !tr->stage2_ready) enter_stage2(tr);

  if (tr->order_pos >= tr->frame_order.size()) {
    tr->frame_order.resize(tr->data.frames.size());
    for (std::size_t i = 0; i < tr->frame_order.size(); ++i) {
      tr->frame_order[i] = static_cast<int>(i);
    }
    tr->rng.shuffle(tr->frame_order);
    tr->order_pos = 0;
  }
  const int fi = tr->frame_order[tr->order_pos++];
  const TrainFrame& frame = tr->data.frames[fi];
  const RenderOptions opts = render_options(cfg);
  const bool stage1 = tr->stage() == 1;
  const FieldPair fields = stage1 ? FieldPair{} : active_fields(*tr);

  const VirtualSampleSet samples = build_samples(cfg, frame, tr->deltas[fi]);
  const Image pred =
      synth_blur_dynamic(samples, tr->scene, fields, tr->data.cam, opts);
  LossResult loss = stage1 ? masked_l1(pred, frame.blurry, frame.mask)
                           : full_l1(pred, frame.blurry);

  BlurGradients grads;
  grads.init(tr->scene, fields);
  const std::vector<PoseGrad> pose_grads = blur_samples_backward(
      samples, tr->scene, fields, tr->data.cam, loss.grad, opts, &grads);

  // Track warmup: supervise the deformed dynamic means at the frame
  // timestamp. The identity path feeds the canonical means directly;
  // the encoding path flows through the field.
  double track_value = 0.0;
  const bool warmup = in_track_warmup(cfg, tr->iter);
  if (!stage1 && warmup && cfg.use_track_loss && tr->dynamic_count() > 0) {
    if (tr->track_refs.point_count() != tr->dynamic_count()) {
      throw std::logic_error(
          "train_step: track correspondence broken during warmup");
    }
    const std::vector<Eigen::Vector3d> dyn_means =
        means_of(tr->scene, GaussianTag::kDynamic);
    DeformRecord record;
    const std::vector<DeformOffsets> offsets =
        deform(tr->dynamic_field, dyn_means, frame.t, &record);
    std::vector<Eigen::Vector3d> deformed(dyn_means.size());
    for (std::size_t g = 0; g < dyn_means.size(); ++g) {
      deformed[g] = dyn_means[g] + offsets[g].dx;
    }
    const TrackLossResult tl = track_loss(deformed, tr->track_refs, fi);
    track_value = cfg.lambda_track * tl.value;

    std::vector<DeformOffsets> up(dyn_means.size());
    std::vector<Eigen::Vector3d> enc_means(dyn_means.size(),
                                           Eigen::Vector3d::Zero());
    for (std::size_t g = 0; g < dyn_means.size(); ++g) {
      up[g].dx = cfg.lambda_track * tl.d_means[g];
    }
    deform_backward(tr->dynamic_field, record, up, &grads.dynamic_field,
                    &enc_means);
    std::size_t k = 0;
    for (std::size_t i = 0; i < tr->scene.size(); ++i) {
      if (tr->scene.tags[i] != GaussianTag::kDynamic) continue;
      grads.scene.d_means[i] += up[k].dx + enc_means[k];
      ++k;
    }
  }
  const double total = loss.value + track_value;
  if (!std::isfinite(total) || !grads.finite()) {
    throw NumericError("train_step: non-finite loss or gradient at iteration " +
                       std::to_string(tr->iter));
  }

  // Densification statistics use the full positional gradient.
  for (std::size_t i = 0; i < tr->scene.size(); ++i) {
    tr->grad_accum[i] += grads.scene.d_means[i].norm();
  }
  tr->accum_steps += 1;

  const int step = tr->iter + 1;  // Adam bias correction counts from 1
  const std::size_t n = tr->scene.size();
  if (n > 0) {
    const double t01 =
        cfg.schedule.iters_total > 1
            ? static_cast<double>(tr->iter) / (cfg.schedule.iters_total - 1)
            : 1.0;
    const double lr_means =
        exp_decay_lr(cfg.rates.means_start, cfg.rates.means_end, t01);
    adam_step(&tr->opt_means, tr->scene.means[0].data(),
              grads.scene.d_means[0].data(), 3 * n, lr_means, step, cfg.adam);
    adam_step(&tr->opt_log_scales, tr->scene.log_scales[0].data(),
              grads.scene.d_log_scales[0].data(), 3 * n, cfg.rates.scale, step,
              cfg.adam);
    adam_step(&tr->opt_opacities, tr->scene.opacity_logits.data(),
              grads.scene.d_opacity_logits.data(), n, cfg.rates.opacity, step,
              cfg.adam);
    adam_step(&tr->opt_colors, tr->scene.colors[0].data(),
              grads.scene.d_colors[0].data(), 3 * n, cfg.rates.color, step,
              cfg.adam);
    // Rotations update in the ambient (w, x, y, z) coordinates and are
    // renormalized back onto the unit quaternions.
    std::vector<double> quats(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Quaterniond& q = tr->scene.rotations[i].q;
      quats[4 * i] = q.w();
      quats[4 * i + 1] = q.x();
      quats[4 * i + 2] = q.y();
      quats[4 * i + 3] = q.z();
    }
    adam_step(&tr->opt_rotations, quats.data(),
              grads.scene.d_rotations[0].data(), 4 * n, cfg.rates.rotation,
              step, cfg.adam);
    for (std::size_t i = 0; i < n; ++i) {
      tr->scene.rotations[i] = Rotation::from_quaternion_lenient(
          Eigen::Quaterniond(quats[4 * i], quats[4 * i + 1], quats[4 * i + 2],
                             quats[4 * i + 3]));
    }
  }

  const bool poses_learnable =
      cfg.use_camera_blur && (stage1 || cfg.optimize_poses_stage2);
  if (poses_learnable) {
    const DeltaPairGrad dg = exposure_pose_sequence_backward(
        frame.pose_base, tr->deltas[fi], cfg.pose_count - 1, pose_grads);
    double params[12], dgrads[12];
    for (int k = 0; k < 6; ++k) {
      params[k] = tr->deltas[fi].start[k];
      params[6 + k] = tr->deltas[fi].end[k];
      dgrads[k] = dg.start[k];
      dgrads[6 + k] = dg.end[k];
    }
    const std::size_t off = 12 * static_cast<std::size_t>(fi);
    adam_update(tr->opt_deltas.m.data() + off, tr->opt_deltas.v.data() + off,
                params, dgrads, 12, cfg.rates.pose_delta, step, cfg.adam);
    for (int k = 0; k < 6; ++k) {
      tr->deltas[fi].start[k] = params[k];
      tr->deltas[fi].end[k] = params[6 + k];
    }
  }

  if (!stage1) {
    if (fields.dynamic_field != nullptr || grads.dynamic_field.sized()) {
      field_adam(&tr->opt_dynamic_field, &tr->dynamic_field,
                 grads.dynamic_field, cfg.rates.field, step, cfg.adam);
    }
    if (fields.static_field != nullptr) {
      field_adam(&tr->opt_static_field, &tr->static_field, grads.static_field,
                 cfg.rates.field, step, cfg.adam);
    }
  }

  tr->iter += 1;
  if (tr->iter % cfg.log_interval == 0 || tr->iter == 1) {
    nlohmann::json doc;
    doc["iter"] = tr->iter;
    doc["stage"] = stage1 ? 1 : 2;
    doc["frame"] = fi;
    doc["loss"] = total;
    doc["l1"] = loss.value;
    doc["track"] = track_value;
    doc["static"] = tr->static_count();
    doc["dynamic"] = tr->dynamic_count();
    append_log(tr, doc);
  }
  return total;
}

void densify_and_prune(Trainer* tr) {
  const TrainerConfig& cfg = tr->cfg;
  if (tr->accum_steps == 0) return;
  const bool dynamic_suspended = in_track_warmup(cfg, tr->iter);
  const std::size_t n = tr->scene.size();

  std::vector<std::uint8_t> drop(n, 0);
  GaussianCloud children;
  std::size_t clones = 0, splits = 0, culled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_dynamic = tr->scene.tags[i] == GaussianTag::kDynamic;
    const bool allowed = is_dynamic
                             ? (cfg.densify.enable_dynamic && !dynamic_suspended)
                             : cfg.densify.enable_static;
    if (!allowed) continue;
    if (sigmoid(tr->scene.opacity_logits[i]) < cfg.densify.opacity_floor) {
      drop[i] = 1;
      ++culled;
      continue;
    }
    const double avg = tr->grad_accum[i] / tr->accum_steps;
    if (avg <= cfg.densify.grad_threshold) continue;
    const Eigen::Vector3d scale =
        tr->scene.log_scales[i].array().exp().matrix();
    int axis = 0;
    scale.maxCoeff(&axis);
    if (scale[axis] > cfg.densify.split_scale) {
      // Two children along the major axis, all scales shrunk by 1.6.
      const Eigen::Vector3d dir =
          tr->scene.rotations[i].q.toRotationMatrix().col(axis);
      const Eigen::Vector3d shrunk =
          tr->scene.log_scales[i].array() - std::log(1.6);
      for (int sgn : {-1, 1}) {
        children.add(tr->scene.means[i] + 0.5 * sgn * scale[axis] * dir,
                     shrunk, tr->scene.rotations[i],
                     tr->scene.opacity_logits[i], tr->scene.colors[i],
                     tr->scene.tags[i]);
      }
      drop[i] = 1;
      ++splits;
    } else {
      children.add(tr->scene.means[i], tr->scene.log_scales[i],
                   tr->scene.rotations[i], tr->scene.opacity_logits[i],
                   tr->scene.colors[i], tr->scene.tags[i]);
      ++clones;
    }
  }

  if (clones + splits + culled > 0) {
    tr->scene.remove_by_flags(drop);
    tr->opt_means.compact(drop, 3);
    tr->opt_log_scales.compact(drop, 3);
    tr->opt_rotations.compact(drop, 4);
    tr->opt_opacities.compact(drop, 1);
    tr->opt_colors.compact(drop, 3);
    tr->scene.append(children);
    tr->opt_means.append(3 * children.size());
    tr->opt_log_scales.append(3 * children.size());
    tr->opt_rotations.append(4 * children.size());
    tr->opt_opacities.append(children.size());
    tr->opt_colors.append(3 * children.size());
  }
  tr->grad_accum.assign(tr->scene.size(), 0.0);
  tr->accum_steps = 0;

  if (tr->static_count() < cfg.densify.min_count) {
    warn(tr, "static Gaussian count fell below " +
                 std::to_string(cfg.densify.min_count));
  }
  nlohmann::json doc;
  doc["iter"] = tr->iter;
  doc["event"] = "densify";
  doc["clones"] = clones;
  doc["splits"] = splits;
  doc["culled"] = culled;
  doc["static"] = tr->static_count();
  doc["dynamic"] = tr->dynamic_count();
  append_log(tr, doc);
}

namespace {

void flush_log(Trainer* tr, const std::filesystem::path& out_dir) {
  if (out_dir.empty() || tr->log_lines.empty()) return;
  std::ofstream out(out_dir / "train_log.jsonl", std::ios::app);
  for (const std::string& line : tr->log_lines) out << line << "\n";
  tr->log_lines.clear();
}

void pack_slot(BspcFile* file, const std::string& name, const AdamSlot& slot) {
  BspcArray& m = file->add("adam/" + name + "/m", {slot.m.size()}, true);
  m.data = slot.m;
  BspcArray& v = file->add("adam/" + name + "/v", {slot.v.size()}, true);
  v.data = slot.v;
}

void unpack_slot(const BspcFile& file, const std::string& name,
                 AdamSlot* slot) {
  slot->m = file.at("adam/" + name + "/m").data;
  slot->v = file.at("adam/" + name + "/v").data;
  if (slot->m.size() != slot->v.size()) {
    throw std::invalid_argument("checkpoint: ragged Adam slot " + name);
  }
}

}  // namespace

void run_training(Trainer* tr, const std::filesystem::path& out_dir,
                  const std::string& config_echo) {
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const TrainerConfig& cfg = tr->cfg;
  const int until = densify_until(cfg);
  while (tr->iter < cfg.schedule.iters_total) {
    train_step(tr);
    if (tr->iter % cfg.densify.interval == 0 && tr->iter <= until) {
      densify_and_prune(tr);
    }
    if (!out_dir.empty() && cfg.checkpoint_interval > 0 &&
        tr->iter % cfg.checkpoint_interval == 0 &&
        tr->iter < cfg.schedule.iters_total) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.bspc", tr->iter);
      save_checkpoint(*tr, (out_dir / name).string(), config_echo);
    }
    flush_log(tr, out_dir);
  }
  if (!out_dir.empty()) {
    save_checkpoint(*tr, (out_dir / "checkpoint_final.bspc").string(),
                    config_echo);
    flush_log(tr, out_dir);
  }
}

void save_checkpoint(const Trainer& tr, const std::string& path,
                     const std::string& config_echo) {
  BspcFile file;
  file.meta["config_echo"] = config_echo;
  file.meta["iter"] = tr.iter;
  file.meta["stage2_ready"] = tr.stage2_ready;
  file.meta["accum_steps"] = tr.accum_steps;
  file.meta["order_pos"] = tr.order_pos;
  file.meta["frame_order"] = tr.frame_order;
  const auto state = tr.rng.state();
  file.meta["rng_state"] = std::vector<std::uint64_t>(state.begin(),
                                                      state.end());
  pack_cloud(&file, tr.scene, true);
  pack_delta_pairs(&file, "pose_deltas", tr.deltas);
  if (tr.static_field.initialized()) {
    pack_field(&file, "static_field", tr.static_field, true);
  }
  if (tr.dynamic_field.initialized()) {
    pack_field(&file, "dynamic_field", tr.dynamic_field, true);
  }
  const std::size_t frames = tr.track_refs.frame_count();
  const std::size_t points = tr.track_refs.point_count();
  if (frames > 0) {
    BspcArray& pos = file.add("track_refs", {frames, points, 3}, true);
    BspcArray& val = file.add("track_valid", {frames, points}, true);
    for (std::size_t i = 0; i < frames; ++i) {
      for (std::size_t p = 0; p < points; ++p) {
        const Eigen::Vector3d& x = tr.track_refs.positions[i][p];
        std::copy(x.data(), x.data() + 3,
                  pos.data.begin() + (i * points + p) * 3);
        val.data[i * points + p] = tr.track_refs.valid[i][p] ? 1.0 : 0.0;
      }
    }
  }
  BspcArray& accum = file.add("densify_accum", {tr.grad_accum.size()}, true);
  accum.data = tr.grad_accum;
  pack_slot(&file, "means", tr.opt_means);
  pack_slot(&file, "log_scales", tr.opt_log_scales);
  pack_slot(&file, "rotations", tr.opt_rotations);
  pack_slot(&file, "opacities", tr.opt_opacities);
  pack_slot(&file, "colors", tr.opt_colors);
  pack_slot(&file, "pose_deltas", tr.opt_deltas);
  if (tr.opt_static_field.size() > 0) {
    pack_slot(&file, "static_field", tr.opt_static_field);
  }
  if (tr.opt_dynamic_field.size() > 0) {
    pack_slot(&file, "dynamic_field", tr.opt_dynamic_field);
  }
  write_bspc(path, file);
}

void load_checkpoint(Trainer* tr, const std::string& path) {
  const BspcFile file = read_bspc(path);
  tr->iter = file.meta.at("iter").get<int>();
  tr->stage2_ready = file.meta.at("stage2_ready").get<bool>();
  tr->accum_steps = file.meta.at("accum_steps").get<int>();
  tr->order_pos = file.meta.at("order_pos").get<std::size_t>();
  tr->frame_order = file.meta.at("frame_order").get<std::vector<int>>();
  const auto words =
      file.meta.at("rng_state").get<std::vector<std::uint64_t>>();
  if (words.size() != 4) {
    throw std::invalid_argument("checkpoint: rng state must hold 4 words");
  }
  tr->rng.set_state({words[0], words[1], words[2], words[3]});

  tr->scene = unpack_cloud(file);
  tr->deltas = unpack_delta_pairs(file, "pose_deltas");
  if (tr->deltas.size() != tr->data.frames.size()) {
    throw std::invalid_argument(
        "checkpoint: pose delta count does not match the dataset");
  }
  tr->static_field = DeformField{};
  tr->dynamic_field = DeformField{};
  if (has_field(file, "static_field")) {
    tr->static_field = unpack_field(file, "static_field");
  }
  if (has_field(file, "dynamic_field")) {
    tr->dynamic_field = unpack_field(file, "dynamic_field");
  }

  tr->track_refs = TrackSet{};
  if (const BspcArray* pos = file.find("track_refs")) {
    const BspcArray& val = file.at("track_valid");
    const std::size_t frames = pos->shape.at(0);
    const std::size_t points = pos->shape.at(1);
    if (val.shape != std::vector<std::size_t>{frames, points}) {
      throw std::invalid_argument("checkpoint: track_valid shape mismatch");
    }
    tr->track_refs.positions.assign(frames, {});
    tr->track_refs.valid.assign(frames, {});
    for (std::size_t i = 0; i < frames; ++i) {
      for (std::size_t p = 0; p < points; ++p) {
        const double* x = pos->data.data() + (i * points + p) * 3;
        tr->track_refs.positions[i].emplace_back(x[0], x[1], x[2]);
        tr->track_refs.valid[i].push_back(val.data[i * points + p] != 0.0 ? 1
                                                                          : 0);
      }
    }
  }

  tr->grad_accum = file.at("densify_accum").data;
  unpack_slot(file, "means", &tr->opt_means);
  unpack_slot(file, "log_scales", &tr->opt_log_scales);
  unpack_slot(file, "rotations", &tr->opt_rotations);
  unpack_slot(file, "opacities", &tr->opt_opacities);
  unpack_slot(file, "colors", &tr->opt_colors);
  unpack_slot(file, "pose_deltas", &tr->opt_deltas);
  tr->opt_static_field = AdamSlot{};
  tr->opt_dynamic_field = AdamSlot{};
  if (file.find("adam/static_field/m") != nullptr) {
    unpack_slot(file, "static_field", &tr->opt_static_field);
  }
  if (file.find("adam/dynamic_field/m") != nullptr) {
    unpack_slot(file, "dynamic_field", &tr->opt_dynamic_field);
  }

  const std::size_t n = tr->scene.size();
  const bool sized = tr->opt_means.size() == 3 * n &&
                     tr->opt_log_scales.size() == 3 * n &&
                     tr->opt_rotations.size() == 4 * n &&
                     tr->opt_opacities.size() == n &&
                     tr->opt_colors.size() == 3 * n &&
                     tr->opt_deltas.size() == 12 * tr->data.frames.size() &&
                     tr->grad_accum.size() == n;
  if (!sized) {
    throw std::invalid_argument("checkpoint: optimizer state does not match "
                                "the scene");
  }
}

std::string checkpoint_config_echo(const std::string& path) {
  const BspcFile file = read_bspc(path);
  return file.meta.at("config_echo").get<std::string>();
}

Image predict_frame(const Trainer& tr, int frame) {
  check_frame_index(tr, frame, "predict_frame");
  const TrainFrame& f = tr.data.frames[frame];
  const FieldPair fields = tr.stage() == 1 ? FieldPair{} : active_fields(tr);
  const VirtualSampleSet samples =
      build_samples(tr.cfg, f, tr.deltas[frame]);
  return synth_blur_dynamic(samples, tr.scene, fields, tr.data.cam,
                            render_options(tr.cfg));
}

Image render_frame(const Trainer& tr, int frame) {
  check_frame_index(tr, frame, "render_frame");
  const TrainFrame& f = tr.data.frames[frame];
  const Pose mid = mid_pose(f.pose_base, tr.deltas[frame]);
  return render(deformed_scene(tr, f.t), mid, tr.data.cam,
                render_options(tr.cfg));
}

MetricReport evaluate(const Trainer& tr) {
  MetricReport report;
  FrameMetrics sum;
  for (std::size_t i = 0; i < tr.data.frames.size(); ++i) {
    const TrainFrame& f = tr.data.frames[i];
    const Image pred = render_frame(tr, static_cast<int>(i));
    FrameMetrics row;
    row.frame = f.index;
    row.psnr = psnr(pred, f.sharp);
    row.ssim = ssim(pred, f.sharp);
    row.lv = laplacian_variance(pred);
    row.psnr_dynamic = f.mask.count() > 0
                           ? psnr_masked(pred, f.sharp, f.mask)
                           : row.psnr;
    const auto psnr_metric = [](const Image& a, const Image& b) {
      return psnr(a, b);
    };
    const auto ssim_metric = [](const Image& a, const Image& b) {
      return ssim(a, b);
    };
    row.psnr_shift = shift_invariant(psnr_metric, pred, f.sharp, 2, true);
    row.ssim_shift = shift_invariant(ssim_metric, pred, f.sharp, 2, true);
    sum.psnr += row.psnr;
    sum.ssim += row.ssim;
    sum.lv += row.lv;
    sum.psnr_dynamic += row.psnr_dynamic;
    sum.psnr_shift += row.psnr_shift;
    sum.ssim_shift += row.ssim_shift;
    report.rows.push_back(row);
  }
  const double count = static_cast<double>(report.rows.size());
  report.aggregate.frame = -1;
  report.aggregate.psnr = sum.psnr / count;
  report.aggregate.ssim = sum.ssim / count;
  report.aggregate.lv = sum.lv / count;
  report.aggregate.psnr_dynamic = sum.psnr_dynamic / count;
  report.aggregate.psnr_shift = sum.psnr_shift / count;
  report.aggregate.ssim_shift = sum.ssim_shift / count;
  return report;
}

std::string metric_report_json(const MetricReport& report) {
  const auto row_json = [](const FrameMetrics& m) {
    nlohmann::json doc;
    doc["frame"] = m.frame;
    doc["psnr"] = m.psnr;
    doc["ssim"] = m.ssim;
    doc["lv"] = m.lv;
    doc["psnr_dynamic"] = m.psnr_dynamic;
    doc["psnr_shift"] = m.psnr_shift;
    doc["ssim_shift"] = m.ssim_shift;
    return doc;
  };
  nlohmann::json doc;
  doc["frames"] = nlohmann::json::array();
  for (const FrameMetrics& m : report.rows) {
    doc["frames"].push_back(row_json(m));
  }
  doc["aggregate"] = row_json(report.aggregate);
  return doc.dump(2) + "\n";
}

}  // namespace blursplat
