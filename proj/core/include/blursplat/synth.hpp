// Parametric scene scripting and dataset generation. A script describes
// Gaussian-cluster geometry, moving objects, a smoothly shaken camera
// and per-frame exposure; generation renders dense-in-time sharp frames,
// averages them into blurry observations, and emits exact mask, depth
// and track supervision alongside.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "blursplat/camera.hpp"
#include "blursplat/gaussian.hpp"
#include "blursplat/image.hpp"
#include "blursplat/lie.hpp"
#include "blursplat/rng.hpp"

namespace blursplat {

enum class TrajectoryKind { kLinear, kCircular, kSpline };

struct DynamicObjectSpec {
  TrajectoryKind trajectory = TrajectoryKind::kLinear;
  // Linear: position(t) = start + t * velocity.
  Eigen::Vector3d start = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  // Circular: orbit of orbit_radius about center in the plane orthogonal
  // to axis; angular_velocity in radians per unit time, phase at t = 0.
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d axis = Eigen::Vector3d::UnitY();
  double orbit_radius = 0.0;
  double angular_velocity = 0.0;
  double phase = 0.0;
  // Spline: uniform Catmull-Rom through at least 4 control points,
  // parameterized over t in [0, 1].
  std::vector<Eigen::Vector3d> control_points;
  // Rigid spin of the cluster about its own center, radians per unit
  // time.
  Eigen::Vector3d spin_axis = Eigen::Vector3d::UnitZ();
  double spin_rate = 0.0;

  int count = 24;                // Gaussians in the cluster
  double radius = 0.12;          // cluster extent, world units
  double gaussian_scale = 0.04;  // per-Gaussian scale, world units
  Eigen::Vector3d color = Eigen::Vector3d(0.8, 0.3, 0.2);
};

struct StaticBlobSpec {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  // Box the cluster fills; a near-zero component makes a quad.
  Eigen::Vector3d extent = Eigen::Vector3d::Ones();
  int count = 40;
  double gaussian_scale = 0.05;
  Eigen::Vector3d color = Eigen::Vector3d(0.5, 0.5, 0.5);
};

struct CameraShakeSpec {
  double translation = 0.0;   // knot amplitude, world units
  double rotation_deg = 0.0;  // knot amplitude, degrees
  int knots = 6;
};

struct SceneScript {
  std::uint64_t seed = 1;
  int frame_count = 24;
  int width = 96;
  int height = 96;
  double focal = 0.0;  // pixels; 0 picks the image width
  // Exposure duration as a fraction of the frame interval; windows are
  // centered on the frame timestamps (i + 0.5) / frame_count, so any
  // fraction up to 1 stays inside [0, 1].
  double exposure_fraction = 0.8;
  int blur_samples = 16;  // sub-exposure renders averaged per frame
  int mask_dilation_px = 0;
  // Track seeds are the canonical frame's dynamic-mask pixels sampled on
  // this pixel grid stride.
  int track_stride = 4;
  double pose_noise_deg = 0.0;
  double pose_noise_t = 0.0;
  CameraShakeSpec shake;
  std::vector<StaticBlobSpec> static_blobs;
  std::vector<DynamicObjectSpec> dynamic_objects;

  void validate() const;
  Camera camera() const;
  double frame_time(int i) const { return (i + 0.5) / frame_count; }
  double exposure() const { return exposure_fraction / frame_count; }
};

// Strict parse: every enumerated failure throws std::invalid_argument
// with the offending key; unknown keys are rejected.
SceneScript parse_scene_script(const nlohmann::json& doc);
SceneScript load_scene_script(const std::filesystem::path& path);

// One sampled cluster in its local frame.
struct BuiltObject {
  std::vector<Eigen::Vector3d> local_means;
  std::vector<Eigen::Vector3d> log_scales;
  std::vector<Rotation> local_rotations;
  std::vector<double> opacity_logits;
  std::vector<Eigen::Vector3d> colors;
};

// Deterministic expansion of a script. All randomness happens here, in
// one serial pass, so frame generation can parallelize afterwards.
// Amplitude fields only scale already-drawn samples: changing shake or
// velocity never reshuffles the sampled geometry.
struct BuiltScene {
  SceneScript script;
  GaussianCloud static_cloud;          // tagged static
  std::vector<BuiltObject> objects;
  std::vector<Vector6d> camera_knots;  // tangent offsets from identity
};

BuiltScene build_scene(const SceneScript& script);

Eigen::Vector3d object_position(const DynamicObjectSpec& obj, double t);
Rotation object_spin(const DynamicObjectSpec& obj, double t);

// Camera pose at time t: identity composed with a clamped Catmull-Rom
// spline through the knot offsets, so the path is C1.
Pose camera_at(const BuiltScene& scene, double t);

// Scene snapshot at time t: static Gaussians first, then each object's
// cluster in script order, tagged dynamic. The layout is stable across t.
GaussianCloud scene_at(const BuiltScene& scene, double t);

// Blur severity as the projected displacement, in pixels, of a point
// across one exposure (endpoint difference; curvature is ignored),
// maximized over frames. The streak follows the object center through
// the moving camera; the shake follows the static blob centers.
double measure_streak_px(const BuiltScene& scene, std::size_t object_index);
double measure_shake_px(const BuiltScene& scene);

struct FrameRecord {
  int index = 0;
  double t = 0.0;
  double tau = 0.0;
  Pose pose_start;  // true pose at t - tau/2
  Pose pose_mid;    // true pose at t
  Pose pose_end;    // true pose at t + tau/2
  Pose pose_init;   // perturbed pose handed to the trainer
  std::string blurry, blurry_png;
  std::string sharp, sharp_png;
  std::string mask, mask_png;  // union footprint over the exposure
  std::string mask_sharp;      // footprint at t only, for seeding
  std::string depth;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int frame_count = 0;
  int width = 0, height = 0;
  Camera camera;
  int blur_samples = 0;
  double exposure_fraction = 0.0;
  int mask_dilation_px = 0;
  int track_stride = 0;
  int canonical_frame = 0;  // frame whose sharp render seeds the tracks
  double sigma_deg = 0.0;  // pose noise actually applied
  double sigma_t = 0.0;
  std::uint64_t noise_seed = 0;
  std::string tracks_2d, tracks_3d, gt_scene;
  std::vector<FrameRecord> frames;
};

void save_manifest(const std::filesystem::path& path,
                   const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Point trajectories, indexed [point][frame]. Points are seeded on the
// canonical frame's dynamic mask, scanned row major on a track_stride
// pixel grid; a pixel seeds a point only when the depth map there comes
// from a dynamic Gaussian, so every seed backprojects onto its object.
// Each seed is attached rigidly to that object and followed through all
// frames. 2D entries with the visible flag clear hold (0, 0).
struct TrackTable2d {
  std::vector<std::vector<Eigen::Vector2d>> uv;
  std::vector<std::vector<std::uint8_t>> visible;
  std::size_t point_count() const { return uv.size(); }
  std::size_t frame_count() const { return uv.empty() ? 0 : uv[0].size(); }
};
struct TrackTable3d {
  std::vector<std::vector<Eigen::Vector3d>> xyz;
  std::size_t point_count() const { return xyz.size(); }
  std::size_t frame_count() const { return xyz.empty() ? 0 : xyz[0].size(); }
};

// CSV of (point_id, frame, u, v, visible) rows, sorted by point then
// frame; the 3D variant stores (point_id, frame, x, y, z).
void write_tracks_2d(const std::filesystem::path& path,
                     const TrackTable2d& tracks);
TrackTable2d read_tracks_2d(const std::filesystem::path& path);
void write_tracks_3d(const std::filesystem::path& path,
                     const TrackTable3d& tracks);
TrackTable3d read_tracks_3d(const std::filesystem::path& path);

// Composes truth with tangent-space Gaussian noise (rotation sigma in
// degrees, translation sigma in world units).
Pose perturb_pose(const Pose& truth, double sigma_deg, double sigma_t,
                  Rng* rng);

// Resamples every frame's initial pose from its true mid pose and
// records the sigmas and seed in the manifest.
void perturb_poses(DatasetManifest* manifest, double sigma_deg,
                   double sigma_t, std::uint64_t seed);

// Renders the dataset into out_dir (created if missing), writes
// manifest.json, and returns the manifest. threads parallelizes over
// frames; the outputs are byte-identical for any thread count.
DatasetManifest generate(const SceneScript& script,
                         const std::filesystem::path& out_dir,
                         int threads = 1);

}  // namespace blursplat
