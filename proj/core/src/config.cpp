#include "blursplat/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>

#include "blursplat/synth.hpp"

namespace blursplat {
namespace {

[[noreturn]] void config_error(const std::string& what) {
  throw std::invalid_argument("run config: " + what);
}

void reject_unknown(const nlohmann::json& doc,
                    std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!doc.is_object()) config_error(where + " must be an object");
  for (const auto& item : doc.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
          return item.key() == k;
        }) == keys.end()) {
      config_error("unknown key '" + item.key() + "' in " + where);
    }
  }
}

double get_num(const nlohmann::json& doc, const char* key, double dflt) {
  if (!doc.contains(key)) return dflt;
  if (!doc[key].is_number())
    config_error(std::string(key) + " must be a number");
  return doc[key].get<double>();
}

int get_int(const nlohmann::json& doc, const char* key, int dflt) {
  if (!doc.contains(key)) return dflt;
  if (!doc[key].is_number_integer())
    config_error(std::string(key) + " must be an integer");
  return doc[key].get<int>();
}

bool get_bool(const nlohmann::json& doc, const char* key, bool dflt) {
  if (!doc.contains(key)) return dflt;
  if (!doc[key].is_boolean())
    config_error(std::string(key) + " must be a boolean");
  return doc[key].get<bool>();
}

std::uint64_t get_u64(const nlohmann::json& doc, const char* key,
                      std::uint64_t dflt) {
  if (!doc.contains(key)) return dflt;
  const nlohmann::json& v = doc[key];
  if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)))
    config_error(std::string(key) + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string get_str(const nlohmann::json& doc, const char* key,
                    const std::string& dflt) {
  if (!doc.contains(key)) return dflt;
  if (!doc[key].is_string())
    config_error(std::string(key) + " must be a string");
  return doc[key].get<std::string>();
}

StageSchedule parse_schedule(const nlohmann::json& doc) {
  reject_unknown(doc, {"iters_stage1", "iters_track_warmup_end", "iters_total"},
                 "schedule");
  StageSchedule s;
  s.iters_stage1 = get_int(doc, "iters_stage1", s.iters_stage1);
  s.iters_track_warmup_end =
      get_int(doc, "iters_track_warmup_end", s.iters_track_warmup_end);
  s.iters_total = get_int(doc, "iters_total", s.iters_total);
  return s;
}

LearningRates parse_rates(const nlohmann::json& doc) {
  reject_unknown(doc,
                 {"means_start", "means_end", "opacity", "scale", "rotation",
                  "color", "pose_delta", "field"},
                 "rates");
  LearningRates r;
  r.means_start = get_num(doc, "means_start", r.means_start);
  r.means_end = get_num(doc, "means_end", r.means_end);
  r.opacity = get_num(doc, "opacity", r.opacity);
  r.scale = get_num(doc, "scale", r.scale);
  r.rotation = get_num(doc, "rotation", r.rotation);
  r.color = get_num(doc, "color", r.color);
  r.pose_delta = get_num(doc, "pose_delta", r.pose_delta);
  r.field = get_num(doc, "field", r.field);
  return r;
}

DensifyPolicy parse_densify(const nlohmann::json& doc) {
  reject_unknown(doc,
                 {"grad_threshold", "opacity_floor", "split_scale", "interval",
                  "until", "min_count", "enable_static", "enable_dynamic"},
                 "densify");
  DensifyPolicy d;
  d.grad_threshold = get_num(doc, "grad_threshold", d.grad_threshold);
  d.opacity_floor = get_num(doc, "opacity_floor", d.opacity_floor);
  d.split_scale = get_num(doc, "split_scale", d.split_scale);
  d.interval = get_int(doc, "interval", d.interval);
  d.until = get_int(doc, "until", d.until);
  d.min_count = static_cast<std::size_t>(
      get_u64(doc, "min_count", static_cast<std::uint64_t>(d.min_count)));
  d.enable_static = get_bool(doc, "enable_static", d.enable_static);
  d.enable_dynamic = get_bool(doc, "enable_dynamic", d.enable_dynamic);
  return d;
}

AdamConfig parse_adam(const nlohmann::json& doc) {
  reject_unknown(doc, {"beta1", "beta2", "eps"}, "adam");
  AdamConfig a;
  a.beta1 = get_num(doc, "beta1", a.beta1);
  a.beta2 = get_num(doc, "beta2", a.beta2);
  a.eps = get_num(doc, "eps", a.eps);
  return a;
}

}  // namespace

TrainerConfig parse_trainer_config(const nlohmann::json& doc) {
  reject_unknown(doc,
                 {"schedule", "rates", "densify", "adam", "lambda_track",
                  "pose_count", "field_depth", "field_width", "field_l_x",
                  "field_l_t", "init_stride", "init_opacity", "seed",
                  "log_interval", "checkpoint_interval",
                  "optimize_poses_stage2", "use_camera_blur",
                  "use_object_blur", "use_track_loss", "use_static_field",
                  "transmittance_floor"},
                 "trainer");
  TrainerConfig cfg;
  if (doc.contains("schedule")) cfg.schedule = parse_schedule(doc["schedule"]);
  if (doc.contains("rates")) cfg.rates = parse_rates(doc["rates"]);
  if (doc.contains("densify")) cfg.densify = parse_densify(doc["densify"]);
  if (doc.contains("adam")) cfg.adam = parse_adam(doc["adam"]);
  cfg.lambda_track = get_num(doc, "lambda_track", cfg.lambda_track);
  cfg.pose_count = get_int(doc, "pose_count", cfg.pose_count);
  cfg.field_depth = get_int(doc, "field_depth", cfg.field_depth);
  cfg.field_width = get_int(doc, "field_width", cfg.field_width);
  cfg.field_l_x = get_int(doc, "field_l_x", cfg.field_l_x);
  cfg.field_l_t = get_int(doc, "field_l_t", cfg.field_l_t);
  cfg.init_stride = get_int(doc, "init_stride", cfg.init_stride);
  cfg.init_opacity = get_num(doc, "init_opacity", cfg.init_opacity);
  cfg.seed = get_u64(doc, "seed", cfg.seed);
  cfg.log_interval = get_int(doc, "log_interval", cfg.log_interval);
  cfg.checkpoint_interval =
      get_int(doc, "checkpoint_interval", cfg.checkpoint_interval);
  cfg.optimize_poses_stage2 =
      get_bool(doc, "optimize_poses_stage2", cfg.optimize_poses_stage2);
  cfg.use_camera_blur = get_bool(doc, "use_camera_blur", cfg.use_camera_blur);
  cfg.use_object_blur = get_bool(doc, "use_object_blur", cfg.use_object_blur);
  cfg.use_track_loss = get_bool(doc, "use_track_loss", cfg.use_track_loss);
  cfg.use_static_field =
      get_bool(doc, "use_static_field", cfg.use_static_field);
  cfg.transmittance_floor =
      get_num(doc, "transmittance_floor", cfg.transmittance_floor);
  cfg.validate();
  return cfg;
}

RunConfig parse_run_config(const nlohmann::json& doc) {
  reject_unknown(doc, {"scene", "data_dir", "out_dir", "threads", "trainer"},
                 "run config");
  RunConfig cfg;
  if (doc.contains("scene")) {
    cfg.scene = doc["scene"];
    parse_scene_script(cfg.scene).validate();
  }
  cfg.data_dir = get_str(doc, "data_dir", cfg.data_dir);
  cfg.out_dir = get_str(doc, "out_dir", cfg.out_dir);
  cfg.threads = get_int(doc, "threads", cfg.threads);
  if (doc.contains("trainer"))
    cfg.trainer = parse_trainer_config(doc["trainer"]);
  if (cfg.data_dir.empty()) config_error("data_dir must not be empty");
  if (cfg.out_dir.empty()) config_error("out_dir must not be empty");
  if (cfg.threads < 0) config_error("threads must be >= 0");
  cfg.trainer.threads = cfg.threads > 0 ? cfg.threads : 1;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    config_error(path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::json trainer_config_json(const TrainerConfig& cfg) {
  nlohmann::json doc;
  doc["schedule"] = {{"iters_stage1", cfg.schedule.iters_stage1},
                     {"iters_track_warmup_end",
                      cfg.schedule.iters_track_warmup_end},
                     {"iters_total", cfg.schedule.iters_total}};
  doc["rates"] = {{"means_start", cfg.rates.means_start},
                  {"means_end", cfg.rates.means_end},
                  {"opacity", cfg.rates.opacity},
                  {"scale", cfg.rates.scale},
                  {"rotation", cfg.rates.rotation},
                  {"color", cfg.rates.color},
                  {"pose_delta", cfg.rates.pose_delta},
                  {"field", cfg.rates.field}};
  doc["densify"] = {{"grad_threshold", cfg.densify.grad_threshold},
                    {"opacity_floor", cfg.densify.opacity_floor},
                    {"split_scale", cfg.densify.split_scale},
                    {"interval", cfg.densify.interval},
                    {"until", cfg.densify.until},
                    {"min_count", cfg.densify.min_count},
                    {"enable_static", cfg.densify.enable_static},
                    {"enable_dynamic", cfg.densify.enable_dynamic}};
  doc["adam"] = {{"beta1", cfg.adam.beta1},
                 {"beta2", cfg.adam.beta2},
                 {"eps", cfg.adam.eps}};
  doc["lambda_track"] = cfg.lambda_track;
  doc["pose_count"] = cfg.pose_count;
  doc["field_depth"] = cfg.field_depth;
  doc["field_width"] = cfg.field_width;
  doc["field_l_x"] = cfg.field_l_x;
  doc["field_l_t"] = cfg.field_l_t;
  doc["init_stride"] = cfg.init_stride;
  doc["init_opacity"] = cfg.init_opacity;
  doc["seed"] = cfg.seed;
  doc["log_interval"] = cfg.log_interval;
  doc["checkpoint_interval"] = cfg.checkpoint_interval;
  doc["optimize_poses_stage2"] = cfg.optimize_poses_stage2;
  doc["use_camera_blur"] = cfg.use_camera_blur;
  doc["use_object_blur"] = cfg.use_object_blur;
  doc["use_track_loss"] = cfg.use_track_loss;
  doc["use_static_field"] = cfg.use_static_field;
  doc["transmittance_floor"] = cfg.transmittance_floor;
  return doc;
}

nlohmann::json run_config_json(const RunConfig& cfg) {
  nlohmann::json doc;
  if (!cfg.scene.is_null()) doc["scene"] = cfg.scene;
  doc["data_dir"] = cfg.data_dir;
  doc["out_dir"] = cfg.out_dir;
  doc["threads"] = cfg.threads;
  doc["trainer"] = trainer_config_json(cfg.trainer);
  return doc;
}

std::string serialize_run_config(const RunConfig& cfg) {
  return run_config_json(cfg).dump(2) + "\n";
}

}  // namespace blursplat
