// Two-stage training loop over a blurry dataset.
//
// Stage 1 fits the static scene and per-frame exposure-endpoint pose
// corrections against the masked blurry observations. Stage 2 seeds
// dynamic Gaussians from the canonical frame, switches to full-image
// loss with per-timestamp deformation fields, and supervises the
// deformed dynamic means with backprojected point tracks during a
// warmup window, after which densification of dynamic Gaussians
// resumes.
//
// One step is a serial transaction over the trainer state; rendering
// parallelizes internally per RenderOptions. Identical config + seed
// gives bitwise-identical state trajectories for any thread count.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "blursplat/blur.hpp"
#include "blursplat/camera.hpp"
#include "blursplat/deform.hpp"
#include "blursplat/gaussian.hpp"
#include "blursplat/image.hpp"
#include "blursplat/lie.hpp"
#include "blursplat/losses.hpp"
#include "blursplat/optimizer.hpp"
#include "blursplat/render.hpp"
#include "blursplat/rng.hpp"

namespace blursplat {

// Loss or gradients stopped being finite; the caller should dump a
// checkpoint for inspection and abort.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StageSchedule {
  int iters_stage1 = 500;
  int iters_track_warmup_end = 1500;
  int iters_total = 4000;

  // Requires 0 < stage1 < warmup_end < total.
  void validate() const;
};

struct LearningRates {
  double means_start = 1.6e-4;  // decays exponentially to means_end
  double means_end = 1.6e-6;
  double opacity = 0.05;
  double scale = 5e-3;
  double rotation = 1e-3;
  double color = 2.5e-3;
  double pose_delta = 1e-3;
  double field = 8e-4;
};

struct DensifyPolicy {
  // Mean per-step positional gradient norm above which a Gaussian is
  // cloned (small) or split (large). The losses are sum-reduced, so the
  // useful scale grows with image area; the default is tuned for 96x96.
  double grad_threshold = 70.0;
  double opacity_floor = 0.005;
  // Realized max scale separating clone from split.
  double split_scale = 0.08;
  int interval = 100;
  int until = 0;  // last iteration that may densify; 0 = iters_total / 2
  std::size_t min_count = 8;  // below this a warning is logged
  bool enable_static = true;
  bool enable_dynamic = true;  // forced off during the track warmup
};

struct TrainerConfig {
  StageSchedule schedule;
  LearningRates rates;
  DensifyPolicy densify;
  AdamConfig adam;
  double lambda_track = 1.0;
  int pose_count = 10;  // virtual samples per exposure
  int field_depth = 4;
  int field_width = 64;
  int field_l_x = 10;
  int field_l_t = 6;
  int init_stride = 4;        // static seeding grid, pixels
  double init_opacity = 0.5;  // initial opacity of seeded Gaussians
  std::uint64_t seed = 1;
  int threads = 1;
  int log_interval = 10;       // JSONL record every k-th iteration
  int checkpoint_interval = 0;  // 0 = only the final checkpoint
  bool optimize_poses_stage2 = false;
  // Ablation toggles; all true is the full method.
  bool use_camera_blur = true;   // off: one fixed pose per frame
  bool use_object_blur = true;   // off: all samples share the frame time
  bool use_track_loss = true;    // off: no warmup supervision
  bool use_static_field = true;  // off: static Gaussians never deform
  double transmittance_floor = 1e-4;

  void validate() const;
};

struct TrainFrame {
  int index = 0;
  double t = 0.0;
  double tau = 0.0;   // exposure in sequence time
  Pose pose_base;     // initial mid pose estimate
  Image blurry;       // training observation
  Image sharp;        // held-out ground truth, evaluation only
  Mask mask;          // dynamic mask over the exposure
  Mask mask_sharp;    // dynamic mask at the frame timestamp
  DepthMap depth;     // oracle depth at the frame timestamp
  std::vector<Eigen::Vector2d> track_uv;  // [point]
  std::vector<std::uint8_t> track_visible;
};

struct TrainData {
  Camera cam;
  int canonical_frame = 0;
  int track_stride = 4;
  std::vector<TrainFrame> frames;

  std::size_t track_points() const {
    return frames.empty() ? 0 : frames.front().track_uv.size();
  }
  void validate() const;
};

// Reads a generated dataset directory (manifest plus arrays) into
// memory. Throws std::invalid_argument on malformed data.
TrainData load_train_data(const std::filesystem::path& dir);

struct Trainer {
  TrainerConfig cfg;
  TrainData data;

  GaussianCloud scene;  // canonical parameters, static first
  DeformField static_field;   // initialized at stage 2 unless ablated
  DeformField dynamic_field;  // initialized at stage 2
  std::vector<PoseDeltaPair> deltas;  // per frame
  TrackSet track_refs;  // fixed at stage 2 entry, column per seed

  AdamSlot opt_means, opt_log_scales, opt_rotations, opt_opacities,
      opt_colors;
  AdamSlot opt_deltas, opt_static_field, opt_dynamic_field;

  int iter = 0;  // completed steps
  bool stage2_ready = false;
  Rng rng;
  std::vector<int> frame_order;
  std::size_t order_pos = 0;

  // Mean positional gradient accumulator driving densification.
  std::vector<double> grad_accum;
  int accum_steps = 0;

  std::vector<std::string> log_lines;  // pending JSONL records

  int stage() const { return iter < cfg.schedule.iters_stage1 ? 1 : 2; }
  std::size_t static_count() const {
    return scene.count_tag(GaussianTag::kStatic);
  }
  std::size_t dynamic_count() const {
    return scene.count_tag(GaussianTag::kDynamic);
  }
};

// Builds the trainer and seeds the static scene by backprojecting a
// strided pixel grid of the canonical frame outside its dynamic mask.
Trainer create_trainer(const TrainerConfig& cfg, TrainData data);

// Midpoint camera pose of the corrected exposure.
Pose mid_pose(const Pose& base, const PoseDeltaPair& deltas);

// Stage 2 entry: backprojects the 2D tracks with the stage-1-optimized
// mid poses into track_refs, seeds one dynamic Gaussian per track point
// with a valid canonical backprojection, and creates the deformation
// fields. Called by train_step at the boundary; idempotent.
void enter_stage2(Trainer* tr);

// Runs one optimization step on the next scheduled frame and returns
// the loss. Throws NumericError when the loss or a gradient stops being
// finite. Throws std::logic_error once iter reaches iters_total.
double train_step(Trainer* tr);

// Clone / split / cull pass per the densify policy; resets the gradient
// accumulator. Exposed for tests; run_training calls it on schedule.
void densify_and_prune(Trainer* tr);

// Full schedule: steps, densification, periodic checkpoints into
// out_dir (empty = none) and the training log. config_echo is stored
// verbatim in every checkpoint.
void run_training(Trainer* tr, const std::filesystem::path& out_dir,
                  const std::string& config_echo);

// State round trip. Loading requires a trainer freshly built with the
// same config and dataset; restore is bit-exact.
void save_checkpoint(const Trainer& tr, const std::string& path,
                     const std::string& config_echo);
void load_checkpoint(Trainer* tr, const std::string& path);
// The config echo stored in a checkpoint.
std::string checkpoint_config_echo(const std::string& path);

// Blur prediction for one frame, exactly as the training loss sees it.
Image predict_frame(const Trainer& tr, int frame);

// Sharp render of the deformed scene at the frame's corrected mid pose.
Image render_frame(const Trainer& tr, int frame);

// Deformed copy of the canonical scene at timestamp t, using whichever
// fields the current stage has initialized.
GaussianCloud deformed_scene(const Trainer& tr, double t);

// The frame's base pose composed with its optimized midpoint
// correction.
Pose corrected_mid_pose(const Trainer& tr, int frame);

struct FrameMetrics {
  int frame = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double lv = 0.0;           // sharpness of the prediction
  double psnr_dynamic = 0.0; // restricted to the dynamic mask
  double psnr_shift = 0.0;   // best PSNR over small integer shifts
  double ssim_shift = 0.0;
};

struct MetricReport {
  std::vector<FrameMetrics> rows;
  FrameMetrics aggregate;  // per-field mean over rows
};

// Renders the deformed scene at every frame's corrected mid pose and
// timestamp and scores it against the held-out sharp ground truth.
MetricReport evaluate(const Trainer& tr);

// One JSON document (indented) with one row per frame plus the
// aggregate.
std::string metric_report_json(const MetricReport& report);

}  // namespace blursplat
