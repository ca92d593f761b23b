#include "blursplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "blursplat/checkpoint.hpp"
#include "blursplat/io.hpp"
#include "blursplat/parallel.hpp"
#include "blursplat/projection.hpp"
#include "blursplat/render.hpp"

namespace blursplat {
namespace {

constexpr char kManifestFormat[] = "bspl-dataset-1";
constexpr char kTracks2dHeader[] = "point_id,frame,u,v,visible";
constexpr char kTracks3dHeader[] = "point_id,frame,x,y,z";

[[noreturn]] void script_error(const std::string& msg) {
  throw std::invalid_argument("scene script: " + msg);
}

// Uniform Catmull-Rom with clamped end tangents; C1 over [0, 1].
template <typename V>
V catmull_rom(const std::vector<V>& pts, double t) {
  const int n = static_cast<int>(pts.size());
  if (n == 1) return pts[0];
  const double u = std::clamp(t, 0.0, 1.0) * (n - 1);
  const int k = std::min(static_cast<int>(u), n - 2);
  const double s = u - k;
  const V& p0 = pts[std::max(k - 1, 0)];
  const V& p1 = pts[k];
  const V& p2 = pts[k + 1];
  const V& p3 = pts[std::min(k + 2, n - 1)];
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * s +
                (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * (s * s) +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * (s * s * s));
}

Rotation random_rotation(Rng* rng) {
  return Rotation::from_quaternion_lenient(Eigen::Quaterniond(
      rng->normal(), rng->normal(), rng->normal(), rng->normal()));
}

// --- strict JSON helpers -------------------------------------------------

void reject_unknown(const nlohmann::json& doc,
                    std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!doc.is_object()) script_error(where + " must be an object");
  for (const auto& item : doc.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
          return item.key() == k;
        }) == keys.end()) {
      script_error("unknown key '" + item.key() + "' in " + where);
    }
  }
}

double get_num(const nlohmann::json& doc, const char* key, double dflt) {
  if (!doc.contains(key)) return dflt;
  if (!doc[key].is_number()) script_error(std::string(key) + " must be a number");
  return doc[key].get<double>();
}

int get_int(const nlohmann::json& doc, const char* key, int dflt) {
  if (!doc.contains(key)) return dflt;
  if (!doc[key].is_number_integer())
    script_error(std::string(key) + " must be an integer");
  return doc[key].get<int>();
}

Eigen::Vector3d get_vec3(const nlohmann::json& doc, const char* key,
                         const Eigen::Vector3d& dflt) {
  if (!doc.contains(key)) return dflt;
  const nlohmann::json& v = doc[key];
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() ||
      !v[1].is_number() || !v[2].is_number()) {
    script_error(std::string(key) + " must be an array of 3 numbers");
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

StaticBlobSpec parse_blob(const nlohmann::json& doc) {
  reject_unknown(doc, {"center", "extent", "count", "gaussian_scale", "color"},
                 "static_blobs entry");
  StaticBlobSpec blob;
  blob.center = get_vec3(doc, "center", blob.center);
  blob.extent = get_vec3(doc, "extent", blob.extent);
  blob.count = get_int(doc, "count", blob.count);
  blob.gaussian_scale = get_num(doc, "gaussian_scale", blob.gaussian_scale);
  blob.color = get_vec3(doc, "color", blob.color);
  return blob;
}

DynamicObjectSpec parse_object(const nlohmann::json& doc) {
  reject_unknown(doc,
                 {"trajectory", "start", "velocity", "center", "axis",
                  "orbit_radius", "angular_velocity", "phase",
                  "control_points", "spin_axis", "spin_rate", "count",
                  "radius", "gaussian_scale", "color"},
                 "dynamic_objects entry");
  DynamicObjectSpec obj;
  if (doc.contains("trajectory")) {
    const std::string kind = doc["trajectory"].is_string()
                                 ? doc["trajectory"].get<std::string>()
                                 : std::string();
    if (kind == "linear") {
      obj.trajectory = TrajectoryKind::kLinear;
    } else if (kind == "circular") {
      obj.trajectory = TrajectoryKind::kCircular;
    } else if (kind == "spline") {
      obj.trajectory = TrajectoryKind::kSpline;
    } else {
      script_error("trajectory must be linear, circular or spline");
    }
  }
  obj.start = get_vec3(doc, "start", obj.start);
  obj.velocity = get_vec3(doc, "velocity", obj.velocity);
  obj.center = get_vec3(doc, "center", obj.center);
  obj.axis = get_vec3(doc, "axis", obj.axis);
  obj.orbit_radius = get_num(doc, "orbit_radius", obj.orbit_radius);
  obj.angular_velocity = get_num(doc, "angular_velocity", obj.angular_velocity);
  obj.phase = get_num(doc, "phase", obj.phase);
  if (doc.contains("control_points")) {
    if (!doc["control_points"].is_array())
      script_error("control_points must be an array");
    obj.control_points.clear();
    for (std::size_t i = 0; i < doc["control_points"].size(); ++i) {
      nlohmann::json wrap = {{"p", doc["control_points"][i]}};
      obj.control_points.push_back(get_vec3(wrap, "p", Eigen::Vector3d::Zero()));
    }
  }
  obj.spin_axis = get_vec3(doc, "spin_axis", obj.spin_axis);
  obj.spin_rate = get_num(doc, "spin_rate", obj.spin_rate);
  obj.count = get_int(doc, "count", obj.count);
  obj.radius = get_num(doc, "radius", obj.radius);
  obj.gaussian_scale = get_num(doc, "gaussian_scale", obj.gaussian_scale);
  obj.color = get_vec3(doc, "color", obj.color);
  return obj;
}

// --- geometry ------------------------------------------------------------

Eigen::Vector3d object_world_point(const DynamicObjectSpec& obj,
                                   const Eigen::Vector3d& local, double t) {
  return object_position(obj, t) + object_spin(obj, t).apply(local);
}

// One pixel set per in-ellipse pixel center: Mahalanobis distance of
// (c, r) from the projected mean at most 3, measured by the conic.
void stamp_footprints(const GaussianCloud& cloud, const Pose& pose,
                      const Camera& cam, Mask* mask) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.tags[i] != GaussianTag::kDynamic) continue;
    const auto proj =
        project_gaussian(cloud.means[i], cloud.log_scales[i],
                         cloud.rotations[i], cloud.opacity_logits[i], pose, cam);
    if (!proj) continue;
    const int c0 = std::max(0, static_cast<int>(std::ceil(proj->mean[0] - proj->radius)));
    const int c1 = std::min(cam.width - 1,
                            static_cast<int>(std::floor(proj->mean[0] + proj->radius)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(proj->mean[1] - proj->radius)));
    const int r1 = std::min(cam.height - 1,
                            static_cast<int>(std::floor(proj->mean[1] + proj->radius)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const Eigen::Vector2d d(c - proj->mean[0], r - proj->mean[1]);
        if (d.dot(proj->conic * d) <= 9.0) mask->set(r, c, 1);
      }
    }
  }
}

std::string frame_file(int index, const char* tail) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frames/frame_%04d_%s", index, tail);
  return buf;
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json pose_json(const Pose& p) {
  double row[7];
  pose_to_array(p, row);
  return nlohmann::json(row);
}

Pose pose_from_json(const nlohmann::json& v, const char* what) {
  if (!v.is_array() || v.size() != 7) {
    throw std::invalid_argument(std::string("manifest: ") + what +
                                " must be an array of 7 numbers");
  }
  double row[7];
  for (int j = 0; j < 7; ++j) row[j] = v[j].get<double>();
  return pose_from_array(row);
}

}  // namespace

Camera SceneScript::camera() const {
  Camera cam;
  cam.fx = focal > 0.0 ? focal : width;
  cam.fy = cam.fx;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

void SceneScript::validate() const {
  if (frame_count < 1) script_error("frame_count must be positive");
  if (width < 8 || height < 8) script_error("resolution must be at least 8x8");
  if (focal < 0.0) script_error("focal must be nonnegative");
  if (!(exposure_fraction > 0.0))
    script_error("exposure_fraction must be positive");
  if (exposure_fraction > 1.0)
    script_error("exposure_fraction exceeds the frame interval");
  if (blur_samples < 2) script_error("blur_samples must be at least 2");
  if (mask_dilation_px < 0) script_error("mask_dilation_px must be nonnegative");
  if (track_stride < 1) script_error("track_stride must be positive");
  if (pose_noise_deg < 0.0 || pose_noise_t < 0.0)
    script_error("pose noise sigmas must be nonnegative");
  if (shake.knots < 4) script_error("camera spline needs at least 4 knots");
  if (shake.translation < 0.0 || shake.rotation_deg < 0.0)
    script_error("shake amplitudes must be nonnegative");
  for (const StaticBlobSpec& blob : static_blobs) {
    if (blob.count < 1) script_error("static blob count must be positive");
    if (!(blob.gaussian_scale > 0.0))
      script_error("static blob gaussian_scale must be positive");
    if ((blob.extent.array() < 0.0).any())
      script_error("static blob extent must be nonnegative");
  }
  for (const DynamicObjectSpec& obj : dynamic_objects) {
    if (obj.count < 1) script_error("dynamic object count must be positive");
    if (!(obj.gaussian_scale > 0.0))
      script_error("dynamic object gaussian_scale must be positive");
    if (obj.radius < 0.0) script_error("dynamic object radius must be nonnegative");
    if (obj.trajectory == TrajectoryKind::kCircular) {
      if (obj.orbit_radius < 0.0) script_error("orbit_radius must be nonnegative");
      if (obj.axis.norm() == 0.0) script_error("circular axis must be nonzero");
    }
    if (obj.trajectory == TrajectoryKind::kSpline &&
        obj.control_points.size() < 4) {
      script_error("spline trajectory needs at least 4 control points");
    }
    if (obj.spin_rate != 0.0 && obj.spin_axis.norm() == 0.0)
      script_error("spin_axis must be nonzero when spin_rate is set");
  }
  camera().validate();
}

SceneScript parse_scene_script(const nlohmann::json& doc) {
  reject_unknown(doc,
                 {"seed", "frame_count", "width", "height", "focal",
                  "exposure_fraction", "blur_samples", "mask_dilation_px",
                  "track_stride", "pose_noise_deg", "pose_noise_t", "shake",
                  "static_blobs", "dynamic_objects"},
                 "script");
  SceneScript script;
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer())
      script_error("seed must be an integer");
    script.seed = doc["seed"].get<std::uint64_t>();
  }
  script.frame_count = get_int(doc, "frame_count", script.frame_count);
  script.width = get_int(doc, "width", script.width);
  script.height = get_int(doc, "height", script.height);
  script.focal = get_num(doc, "focal", script.focal);
  script.exposure_fraction =
      get_num(doc, "exposure_fraction", script.exposure_fraction);
  script.blur_samples = get_int(doc, "blur_samples", script.blur_samples);
  script.mask_dilation_px =
      get_int(doc, "mask_dilation_px", script.mask_dilation_px);
  script.track_stride = get_int(doc, "track_stride", script.track_stride);
  script.pose_noise_deg = get_num(doc, "pose_noise_deg", script.pose_noise_deg);
  script.pose_noise_t = get_num(doc, "pose_noise_t", script.pose_noise_t);
  if (doc.contains("shake")) {
    reject_unknown(doc["shake"], {"translation", "rotation_deg", "knots"},
                   "shake");
    script.shake.translation =
        get_num(doc["shake"], "translation", script.shake.translation);
    script.shake.rotation_deg =
        get_num(doc["shake"], "rotation_deg", script.shake.rotation_deg);
    script.shake.knots = get_int(doc["shake"], "knots", script.shake.knots);
  }
  if (doc.contains("static_blobs")) {
    if (!doc["static_blobs"].is_array())
      script_error("static_blobs must be an array");
    for (const nlohmann::json& entry : doc["static_blobs"])
      script.static_blobs.push_back(parse_blob(entry));
  }
  if (doc.contains("dynamic_objects")) {
    if (!doc["dynamic_objects"].is_array())
      script_error("dynamic_objects must be an array");
    for (const nlohmann::json& entry : doc["dynamic_objects"])
      script.dynamic_objects.push_back(parse_object(entry));
  }
  script.validate();
  return script;
}

SceneScript load_scene_script(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    script_error(std::string("invalid JSON in ") + path.string() + ": " +
                 e.what());
  }
  return parse_scene_script(doc);
}

BuiltScene build_scene(const SceneScript& script) {
  script.validate();
  BuiltScene scene;
  scene.script = script;
  Rng rng(script.seed);

  auto jitter_color = [&](const Eigen::Vector3d& base) {
    Eigen::Vector3d c;
    for (int k = 0; k < 3; ++k)
      c[k] = std::clamp(base[k] * rng.uniform(0.6, 1.0), 0.0, 1.0);
    return c;
  };
  auto jitter_log_scale = [&](double s) {
    Eigen::Vector3d ls;
    for (int k = 0; k < 3; ++k) ls[k] = std::log(s * rng.uniform(0.8, 1.2));
    return ls;
  };

  for (const StaticBlobSpec& blob : script.static_blobs) {
    for (int i = 0; i < blob.count; ++i) {
      Eigen::Vector3d mean;
      for (int k = 0; k < 3; ++k)
        mean[k] = blob.center[k] + blob.extent[k] * rng.uniform(-0.5, 0.5);
      const Eigen::Vector3d ls = jitter_log_scale(blob.gaussian_scale);
      const Rotation rot = random_rotation(&rng);
      const double opacity = rng.uniform(0.65, 0.95);
      scene.static_cloud.add(mean, ls, rot, logit(opacity),
                             jitter_color(blob.color), GaussianTag::kStatic);
    }
  }

  for (const DynamicObjectSpec& obj : script.dynamic_objects) {
    BuiltObject built;
    for (int i = 0; i < obj.count; ++i) {
      Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
      const double len = dir.norm();
      if (len > 0.0) dir /= len;
      const double r = obj.radius * std::cbrt(rng.uniform());
      built.local_means.push_back(r * dir);
      built.log_scales.push_back(jitter_log_scale(obj.gaussian_scale));
      built.local_rotations.push_back(random_rotation(&rng));
      built.opacity_logits.push_back(logit(rng.uniform(0.8, 0.95)));
      built.colors.push_back(jitter_color(obj.color));
    }
    scene.objects.push_back(std::move(built));
  }

  const double rot_amp = script.shake.rotation_deg * std::numbers::pi / 180.0;
  for (int k = 0; k < script.shake.knots; ++k) {
    Vector6d knot;
    for (int j = 0; j < 3; ++j) knot[j] = rot_amp * rng.uniform(-1.0, 1.0);
    for (int j = 3; j < 6; ++j)
      knot[j] = script.shake.translation * rng.uniform(-1.0, 1.0);
    scene.camera_knots.push_back(knot);
  }
  return scene;
}

Eigen::Vector3d object_position(const DynamicObjectSpec& obj, double t) {
  switch (obj.trajectory) {
    case TrajectoryKind::kLinear:
      return obj.start + t * obj.velocity;
    case TrajectoryKind::kCircular: {
      const Eigen::Vector3d n = obj.axis.normalized();
      const Eigen::Vector3d seed =
          std::abs(n[0]) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
      const Eigen::Vector3d u = (seed - seed.dot(n) * n).normalized();
      const Eigen::Vector3d v = n.cross(u);
      const double ang = obj.phase + obj.angular_velocity * t;
      return obj.center + obj.orbit_radius * (std::cos(ang) * u + std::sin(ang) * v);
    }
    case TrajectoryKind::kSpline:
      return catmull_rom(obj.control_points, t);
  }
  throw std::logic_error("unreachable trajectory kind");
}

Rotation object_spin(const DynamicObjectSpec& obj, double t) {
  if (obj.spin_rate == 0.0) return Rotation{};
  return so3_exp(obj.spin_axis.normalized() * (obj.spin_rate * t));
}

Pose camera_at(const BuiltScene& scene, double t) {
  return apply_delta(Pose{},
                     delta_to_pose(catmull_rom(scene.camera_knots, t)));
}

GaussianCloud scene_at(const BuiltScene& scene, double t) {
  GaussianCloud cloud = scene.static_cloud;
  for (std::size_t o = 0; o < scene.objects.size(); ++o) {
    const DynamicObjectSpec& spec = scene.script.dynamic_objects[o];
    const BuiltObject& built = scene.objects[o];
    const Eigen::Vector3d pos = object_position(spec, t);
    const Rotation spin = object_spin(spec, t);
    for (std::size_t i = 0; i < built.local_means.size(); ++i) {
      cloud.add(pos + spin.apply(built.local_means[i]), built.log_scales[i],
                spin * built.local_rotations[i], built.opacity_logits[i],
                built.colors[i], GaussianTag::kDynamic);
    }
  }
  return cloud;
}

double measure_streak_px(const BuiltScene& scene, std::size_t object_index) {
  if (object_index >= scene.objects.size())
    throw std::invalid_argument("measure_streak_px: no such object");
  const SceneScript& script = scene.script;
  const DynamicObjectSpec& obj = script.dynamic_objects[object_index];
  const Camera cam = script.camera();
  const double half = script.exposure() / 2.0;
  double best = 0.0;
  for (int i = 0; i < script.frame_count; ++i) {
    const double t = script.frame_time(i);
    const Eigen::Vector3d a =
        camera_at(scene, t - half).apply(object_position(obj, t - half));
    const Eigen::Vector3d b =
        camera_at(scene, t + half).apply(object_position(obj, t + half));
    if (a[2] <= kNearPlane || b[2] <= kNearPlane) continue;
    best = std::max(best, (cam.project(b) - cam.project(a)).norm());
  }
  return best;
}

double measure_shake_px(const BuiltScene& scene) {
  const SceneScript& script = scene.script;
  const Camera cam = script.camera();
  const double half = script.exposure() / 2.0;
  double best = 0.0;
  for (int i = 0; i < script.frame_count; ++i) {
    const double t = script.frame_time(i);
    const Pose pa = camera_at(scene, t - half);
    const Pose pb = camera_at(scene, t + half);
    for (const StaticBlobSpec& blob : script.static_blobs) {
      const Eigen::Vector3d a = pa.apply(blob.center);
      const Eigen::Vector3d b = pb.apply(blob.center);
      if (a[2] <= kNearPlane || b[2] <= kNearPlane) continue;
      best = std::max(best, (cam.project(b) - cam.project(a)).norm());
    }
  }
  return best;
}

// --- tracks --------------------------------------------------------------

namespace {

void write_tracks(const std::filesystem::path& path, const char* header,
                  std::size_t points, std::size_t frames,
                  const std::function<std::string(std::size_t, std::size_t)>&
                      row) {
  std::string text = header;
  text += '\n';
  for (std::size_t p = 0; p < points; ++p) {
    for (std::size_t f = 0; f < frames; ++f) {
      text += std::to_string(p);
      text += ',';
      text += std::to_string(f);
      text += ',';
      text += row(p, f);
      text += '\n';
    }
  }
  write_text_file(path, text);
}

// Rows must arrive exactly as written: grouped by point, frames
// ascending and contiguous.
std::vector<std::vector<std::string>> read_csv(
    const std::filesystem::path& path, const char* header, int columns) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw std::invalid_argument("tracks: bad header in " + path.string());
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t begin = 0;
    for (;;) {
      const std::size_t comma = line.find(',', begin);
      cells.push_back(line.substr(begin, comma - begin));
      if (comma == std::string::npos) break;
      begin = comma + 1;
    }
    if (static_cast<int>(cells.size()) != columns)
      throw std::invalid_argument("tracks: bad row in " + path.string());
    const std::size_t p = std::stoull(cells[0]);
    const std::size_t f = std::stoull(cells[1]);
    bool ordered;
    if (rows.empty()) {
      ordered = p == 0 && f == 0;
    } else {
      const std::size_t lp = std::stoull(rows.back()[0]);
      const std::size_t lf = std::stoull(rows.back()[1]);
      ordered = (p == lp && f == lf + 1) || (p == lp + 1 && f == 0);
    }
    if (!ordered)
      throw std::invalid_argument("tracks: rows out of order in " +
                                  path.string());
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

void write_tracks_2d(const std::filesystem::path& path,
                     const TrackTable2d& tracks) {
  write_tracks(path, kTracks2dHeader, tracks.point_count(),
               tracks.frame_count(), [&](std::size_t p, std::size_t f) {
                 return fmt_g17(tracks.uv[p][f][0]) + "," +
                        fmt_g17(tracks.uv[p][f][1]) + "," +
                        (tracks.visible[p][f] ? "1" : "0");
               });
}

TrackTable2d read_tracks_2d(const std::filesystem::path& path) {
  const auto rows = read_csv(path, kTracks2dHeader, 5);
  TrackTable2d tracks;
  for (const auto& cells : rows) {
    const std::size_t p = std::stoull(cells[0]);
    if (p == tracks.uv.size()) {
      tracks.uv.emplace_back();
      tracks.visible.emplace_back();
    }
    tracks.uv[p].emplace_back(std::stod(cells[2]), std::stod(cells[3]));
    tracks.visible[p].push_back(cells[4] == "1");
  }
  return tracks;
}

void write_tracks_3d(const std::filesystem::path& path,
                     const TrackTable3d& tracks) {
  write_tracks(path, kTracks3dHeader, tracks.point_count(),
               tracks.frame_count(), [&](std::size_t p, std::size_t f) {
                 return fmt_g17(tracks.xyz[p][f][0]) + "," +
                        fmt_g17(tracks.xyz[p][f][1]) + "," +
                        fmt_g17(tracks.xyz[p][f][2]);
               });
}

TrackTable3d read_tracks_3d(const std::filesystem::path& path) {
  const auto rows = read_csv(path, kTracks3dHeader, 5);
  TrackTable3d tracks;
  for (const auto& cells : rows) {
    const std::size_t p = std::stoull(cells[0]);
    if (p == tracks.xyz.size()) tracks.xyz.emplace_back();
    tracks.xyz[p].emplace_back(std::stod(cells[2]), std::stod(cells[3]),
                               std::stod(cells[4]));
  }
  return tracks;
}

// --- pose noise ----------------------------------------------------------

Pose perturb_pose(const Pose& truth, double sigma_deg, double sigma_t,
                  Rng* rng) {
  if (sigma_deg < 0.0 || sigma_t < 0.0)
    throw std::invalid_argument("perturb_pose: sigmas must be nonnegative");
  const double sr = sigma_deg * std::numbers::pi / 180.0;
  Vector6d xi;
  for (int k = 0; k < 3; ++k) xi[k] = sr * rng->normal();
  for (int k = 3; k < 6; ++k) xi[k] = sigma_t * rng->normal();
  return apply_delta(truth, delta_to_pose(xi));
}

void perturb_poses(DatasetManifest* manifest, double sigma_deg,
                   double sigma_t, std::uint64_t seed) {
  Rng rng(seed);
  for (FrameRecord& frame : manifest->frames)
    frame.pose_init = perturb_pose(frame.pose_mid, sigma_deg, sigma_t, &rng);
  manifest->sigma_deg = sigma_deg;
  manifest->sigma_t = sigma_t;
  manifest->noise_seed = seed;
}

// --- manifest ------------------------------------------------------------

void save_manifest(const std::filesystem::path& path,
                   const DatasetManifest& m) {
  nlohmann::json doc;
  doc["format"] = kManifestFormat;
  doc["seed"] = m.seed;
  doc["frame_count"] = m.frame_count;
  doc["width"] = m.width;
  doc["height"] = m.height;
  doc["camera"] = {{"fx", m.camera.fx}, {"fy", m.camera.fy},
                   {"cx", m.camera.cx}, {"cy", m.camera.cy}};
  doc["blur_samples"] = m.blur_samples;
  doc["exposure_fraction"] = m.exposure_fraction;
  doc["mask_dilation_px"] = m.mask_dilation_px;
  doc["track_stride"] = m.track_stride;
  doc["canonical_frame"] = m.canonical_frame;
  doc["pose_noise"] = {{"sigma_deg", m.sigma_deg}, {"sigma_t", m.sigma_t},
                       {"seed", m.noise_seed}};
  doc["tracks_2d"] = m.tracks_2d;
  doc["tracks_3d"] = m.tracks_3d;
  doc["gt_scene"] = m.gt_scene;
  nlohmann::json frames = nlohmann::json::array();
  for (const FrameRecord& f : m.frames) {
    frames.push_back({{"index", f.index},
                      {"t", f.t},
                      {"tau", f.tau},
                      {"pose_start", pose_json(f.pose_start)},
                      {"pose_mid", pose_json(f.pose_mid)},
                      {"pose_end", pose_json(f.pose_end)},
                      {"pose_init", pose_json(f.pose_init)},
                      {"blurry", f.blurry},
                      {"blurry_png", f.blurry_png},
                      {"sharp", f.sharp},
                      {"sharp_png", f.sharp_png},
                      {"mask", f.mask},
                      {"mask_png", f.mask_png},
                      {"mask_sharp", f.mask_sharp},
                      {"depth", f.depth}});
  }
  doc["frames"] = std::move(frames);
  write_text_file(path, doc.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("manifest: invalid JSON in " + path.string() +
                                ": " + e.what());
  }
  if (!doc.contains("format") || doc["format"] != kManifestFormat)
    throw std::invalid_argument("manifest: unrecognized format in " +
                                path.string());
  DatasetManifest m;
  m.seed = doc.at("seed").get<std::uint64_t>();
  m.frame_count = doc.at("frame_count").get<int>();
  m.width = doc.at("width").get<int>();
  m.height = doc.at("height").get<int>();
  m.camera.fx = doc.at("camera").at("fx").get<double>();
  m.camera.fy = doc.at("camera").at("fy").get<double>();
  m.camera.cx = doc.at("camera").at("cx").get<double>();
  m.camera.cy = doc.at("camera").at("cy").get<double>();
  m.camera.width = m.width;
  m.camera.height = m.height;
  m.blur_samples = doc.at("blur_samples").get<int>();
  m.exposure_fraction = doc.at("exposure_fraction").get<double>();
  m.mask_dilation_px = doc.at("mask_dilation_px").get<int>();
  m.track_stride = doc.at("track_stride").get<int>();
  m.canonical_frame = doc.at("canonical_frame").get<int>();
  m.sigma_deg = doc.at("pose_noise").at("sigma_deg").get<double>();
  m.sigma_t = doc.at("pose_noise").at("sigma_t").get<double>();
  m.noise_seed = doc.at("pose_noise").at("seed").get<std::uint64_t>();
  m.tracks_2d = doc.at("tracks_2d").get<std::string>();
  m.tracks_3d = doc.at("tracks_3d").get<std::string>();
  m.gt_scene = doc.at("gt_scene").get<std::string>();
  for (const nlohmann::json& fj : doc.at("frames")) {
    FrameRecord f;
    f.index = fj.at("index").get<int>();
    f.t = fj.at("t").get<double>();
    f.tau = fj.at("tau").get<double>();
    f.pose_start = pose_from_json(fj.at("pose_start"), "pose_start");
    f.pose_mid = pose_from_json(fj.at("pose_mid"), "pose_mid");
    f.pose_end = pose_from_json(fj.at("pose_end"), "pose_end");
    f.pose_init = pose_from_json(fj.at("pose_init"), "pose_init");
    f.blurry = fj.at("blurry").get<std::string>();
    f.blurry_png = fj.at("blurry_png").get<std::string>();
    f.sharp = fj.at("sharp").get<std::string>();
    f.sharp_png = fj.at("sharp_png").get<std::string>();
    f.mask = fj.at("mask").get<std::string>();
    f.mask_png = fj.at("mask_png").get<std::string>();
    f.mask_sharp = fj.at("mask_sharp").get<std::string>();
    f.depth = fj.at("depth").get<std::string>();
    m.frames.push_back(std::move(f));
  }
  return m;
}

// --- generation ----------------------------------------------------------

DatasetManifest generate(const SceneScript& script,
                         const std::filesystem::path& out_dir, int threads) {
  const BuiltScene scene = build_scene(script);
  const Camera cam = script.camera();
  const int m = script.blur_samples;
  const double tau = script.exposure();

  // Reject trajectories that leave the viewable range anywhere inside an
  // exposure, before any file is written.
  for (int i = 0; i < script.frame_count; ++i) {
    for (int j = 0; j < m; ++j) {
      const double t =
          script.frame_time(i) - tau / 2.0 + tau * j / (m - 1.0);
      const Pose pose = camera_at(scene, t);
      for (const DynamicObjectSpec& obj : script.dynamic_objects) {
        if (pose.apply(object_position(obj, t))[2] <= kNearPlane) {
          script_error("trajectory leaves the camera frustum at t = " +
                       fmt_g17(t));
        }
      }
    }
  }

  std::filesystem::create_directories(out_dir / "frames");

  DatasetManifest manifest;
  manifest.seed = script.seed;
  manifest.frame_count = script.frame_count;
  manifest.width = script.width;
  manifest.height = script.height;
  manifest.camera = cam;
  manifest.blur_samples = m;
  manifest.exposure_fraction = script.exposure_fraction;
  manifest.mask_dilation_px = script.mask_dilation_px;
  manifest.track_stride = script.track_stride;
  manifest.tracks_2d = "tracks_2d.csv";
  manifest.tracks_3d = "tracks_3d.csv";
  manifest.gt_scene = "gt_scene.bspc";
  manifest.frames.resize(script.frame_count);

  const RenderOptions opts;  // frame-level parallelism only
  parallel_for_blocks(
      static_cast<std::size_t>(script.frame_count), 1, threads,
      [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t fi = begin; fi < end; ++fi) {
          const int i = static_cast<int>(fi);
          const double t_mid = script.frame_time(i);
          Image sum(script.width, script.height);
          Mask footprint_union(script.width, script.height);
          for (int j = 0; j < m; ++j) {
            const double t = t_mid - tau / 2.0 + tau * j / (m - 1.0);
            const GaussianCloud cloud = scene_at(scene, t);
            const Pose pose = camera_at(scene, t);
            const Image img = render(cloud, pose, cam, opts);
            for (std::size_t k = 0; k < sum.data.size(); ++k)
              sum.data[k] += img.data[k];
            stamp_footprints(cloud, pose, cam, &footprint_union);
          }
          Image blurry = sum;
          for (double& v : blurry.data) v /= m;

          const GaussianCloud mid_cloud = scene_at(scene, t_mid);
          const Pose pose_mid = camera_at(scene, t_mid);
          DepthMap depth(script.width, script.height);
          const Image sharp = render(mid_cloud, pose_mid, cam, opts, &depth);
          Mask mask_sharp(script.width, script.height);
          stamp_footprints(mid_cloud, pose_mid, cam, &mask_sharp);
          const Mask mask =
              script.mask_dilation_px > 0
                  ? dilate(footprint_union, script.mask_dilation_px)
                  : footprint_union;

          FrameRecord& rec = manifest.frames[fi];
          rec.index = i;
          rec.t = t_mid;
          rec.tau = tau;
          rec.pose_start = camera_at(scene, t_mid - tau / 2.0);
          rec.pose_mid = pose_mid;
          rec.pose_end = camera_at(scene, t_mid + tau / 2.0);
          rec.pose_init = pose_mid;
          rec.blurry = frame_file(i, "blurry.npy");
          rec.blurry_png = frame_file(i, "blurry.png");
          rec.sharp = frame_file(i, "sharp.npy");
          rec.sharp_png = frame_file(i, "sharp.png");
          rec.mask = frame_file(i, "mask.npy");
          rec.mask_png = frame_file(i, "mask.png");
          rec.mask_sharp = frame_file(i, "mask_sharp.npy");
          rec.depth = frame_file(i, "depth.npy");

          write_image_npy(out_dir / rec.blurry, blurry);
          write_png(out_dir / rec.blurry_png, blurry);
          write_image_npy(out_dir / rec.sharp, sharp);
          write_png(out_dir / rec.sharp_png, sharp);
          write_mask_npy(out_dir / rec.mask, mask);
          Image mask_view(script.width, script.height);
          for (std::size_t k = 0; k < mask.data.size(); ++k) {
            const double v = mask.data[k] ? 1.0 : 0.0;
            mask_view.data[k * 3] = v;
            mask_view.data[k * 3 + 1] = v;
            mask_view.data[k * 3 + 2] = v;
          }
          write_png(out_dir / rec.mask_png, mask_view);
          write_mask_npy(out_dir / rec.mask_sharp, mask_sharp);
          write_depth_npy(out_dir / rec.depth, depth);
        }
      });

  perturb_poses(&manifest, script.pose_noise_deg, script.pose_noise_t,
                script.seed + 1);
  manifest.canonical_frame = script.frame_count / 2;

  // Track seeds: scan the canonical frame's undilated mask on the stride
  // grid, row major, and keep the pixels whose depth value belongs to a
  // dynamic Gaussian. Depth stores the dominant splat's exact view z, so
  // matching it against the canonical cloud identifies the owning object
  // without replaying the compositor.
  const double canonical_t = script.frame_time(manifest.canonical_frame);
  const Pose pose_c = manifest.frames[manifest.canonical_frame].pose_mid;
  const GaussianCloud cloud_c = scene_at(scene, canonical_t);
  DepthMap depth_c(script.width, script.height);
  render(cloud_c, pose_c, cam, opts, &depth_c);
  Mask mask_c(script.width, script.height);
  stamp_footprints(cloud_c, pose_c, cam, &mask_c);

  std::vector<std::size_t> object_of;  // dynamic index -> object index
  std::vector<double> view_z;
  {
    std::size_t base = scene.static_cloud.size();
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      for (std::size_t g = 0; g < scene.objects[o].local_means.size(); ++g) {
        object_of.push_back(o);
        view_z.push_back(pose_c.apply(cloud_c.means[base + g])[2]);
      }
      base += scene.objects[o].local_means.size();
    }
  }

  struct Seed {
    std::size_t object;
    Eigen::Vector3d local;
  };
  std::vector<Seed> seeds;
  for (int r = 0; r < script.height; r += script.track_stride) {
    for (int c = 0; c < script.width; c += script.track_stride) {
      if (!mask_c.at(r, c)) continue;
      const double z = depth_c.at(r, c);
      if (z <= 0.0) continue;
      std::size_t best = view_z.size();
      for (std::size_t k = 0; k < view_z.size(); ++k) {
        if (std::abs(view_z[k] - z) < 1e-9) {
          best = k;
          break;
        }
      }
      if (best == view_z.size()) continue;  // a static splat is in front
      const DynamicObjectSpec& spec = script.dynamic_objects[object_of[best]];
      const Eigen::Vector3d world =
          pose_c.inverse().apply(cam.unproject(c, r, z));
      const Eigen::Vector3d local =
          object_spin(spec, canonical_t)
              .inverse()
              .apply(world - object_position(spec, canonical_t));
      seeds.push_back({object_of[best], local});
    }
  }

  TrackTable2d t2;
  TrackTable3d t3;
  for (const Seed& seed : seeds) {
    const DynamicObjectSpec& spec = script.dynamic_objects[seed.object];
    std::vector<Eigen::Vector2d> uv(script.frame_count);
    std::vector<std::uint8_t> visible(script.frame_count);
    std::vector<Eigen::Vector3d> xyz(script.frame_count);
    for (int i = 0; i < script.frame_count; ++i) {
      const double t = script.frame_time(i);
      const Eigen::Vector3d world = object_world_point(spec, seed.local, t);
      xyz[i] = world;
      const Eigen::Vector3d view = manifest.frames[i].pose_mid.apply(world);
      if (view[2] > kNearPlane) {
        const Eigen::Vector2d p = cam.project(view);
        const bool inside = p[0] >= 0.0 && p[0] <= cam.width - 1.0 &&
                            p[1] >= 0.0 && p[1] <= cam.height - 1.0;
        uv[i] = p;
        visible[i] = inside ? 1 : 0;
        if (!inside) uv[i] = Eigen::Vector2d::Zero();
      } else {
        uv[i] = Eigen::Vector2d::Zero();
        visible[i] = 0;
      }
    }
    t2.uv.push_back(std::move(uv));
    t2.visible.push_back(std::move(visible));
    t3.xyz.push_back(std::move(xyz));
  }
  write_tracks_2d(out_dir / manifest.tracks_2d, t2);
  write_tracks_3d(out_dir / manifest.tracks_3d, t3);

  // Reference scene snapshot for debugging and oracle checks; canonical
  // time is the middle frame's timestamp.
  BspcFile gt;
  gt.meta["canonical_t"] = canonical_t;
  pack_cloud(&gt, cloud_c, true);
  std::vector<Pose> mid_poses;
  for (const FrameRecord& f : manifest.frames) mid_poses.push_back(f.pose_mid);
  pack_pose_array(&gt, "poses_mid", mid_poses);
  write_bspc((out_dir / manifest.gt_scene).string(), gt);

  save_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace blursplat
