// Operator entry points for the pipeline: dataset generation, training,
// rendering, evaluation and ablation sweeps. One command per process;
// every command is deterministic under a fixed seed and writes the
// exact configuration it ran with into its output directory. The same
// serialized configuration is echoed verbatim into every checkpoint.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numeric failure (trainer state is dumped before aborting).
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "blursplat/config.hpp"
#include "blursplat/io.hpp"
#include "blursplat/synth.hpp"
#include "blursplat/trainer.hpp"

using namespace blursplat;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  int threads = -1;
  long long seed = -1;
};

int config_failure(const std::exception& e) {
  std::fprintf(stderr, "config error: %s\n", e.what());
  return kExitConfig;
}

int data_failure(const std::exception& e) {
  std::fprintf(stderr, "data error: %s\n", e.what());
  return kExitData;
}

// Flags override config keys; a zero thread budget resolves to the
// hardware concurrency so the stored effective config is concrete.
RunConfig resolve_config(const CommonFlags& fl, bool seed_is_scene) {
  RunConfig cfg = load_run_config(fl.config_path);
  if (!fl.data_dir.empty()) cfg.data_dir = fl.data_dir;
  if (!fl.out_dir.empty()) cfg.out_dir = fl.out_dir;
  if (fl.threads >= 0) cfg.threads = fl.threads;
  if (cfg.threads == 0) {
    const unsigned hc = std::thread::hardware_concurrency();
    cfg.threads = hc > 0 ? static_cast<int>(hc) : 1;
  }
  cfg.trainer.threads = cfg.threads;
  if (fl.seed >= 0) {
    if (seed_is_scene) {
      if (!cfg.scene.is_null())
        cfg.scene["seed"] = static_cast<std::uint64_t>(fl.seed);
    } else {
      cfg.trainer.seed = static_cast<std::uint64_t>(fl.seed);
    }
  }
  return cfg;
}

// "w/o-TL", "wo_tl" and "wotl" are the same variant.
std::string normalize_variant(const std::string& name) {
  std::string out;
  for (char c : name) {
    const char l =
        static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (l == '/' || l == '-' || l == '_' || l == ' ') continue;
    out.push_back(l);
  }
  return out;
}

void apply_variant(TrainerConfig* cfg, const std::string& raw) {
  const std::string v = normalize_variant(raw);
  if (v == "full") return;
  if (v == "wotl") {
    cfg->use_track_loss = false;
    cfg->lambda_track = 0.0;
    return;
  }
  if (v == "wodb") {
    cfg->use_object_blur = false;
    return;
  }
  if (v == "wosd") {
    cfg->use_camera_blur = false;
    return;
  }
  if (v == "wosdf") {
    cfg->use_static_field = false;
    return;
  }
  if (v == "baseline") {
    cfg->use_camera_blur = false;
    cfg->use_object_blur = false;
    return;
  }
  throw std::invalid_argument(
      "unknown ablation '" + raw +
      "' (valid: full, wo-tl, wo-db, wo-sd, wo-sdf, baseline)");
}

void write_run_config(const fs::path& dir, const std::string& echo) {
  fs::create_directories(dir);
  write_text_file(dir / "config.json", echo);
}

int cmd_generate(const CommonFlags& fl) {
  RunConfig cfg;
  SceneScript script;
  try {
    cfg = resolve_config(fl, true);
    if (cfg.scene.is_null())
      throw std::invalid_argument("run config: generate needs a scene");
    script = parse_scene_script(cfg.scene);
    script.validate();
  } catch (const std::exception& e) {
    return config_failure(e);
  }
  try {
    const fs::path dir = cfg.data_dir;
    fs::create_directories(dir);
    const DatasetManifest manifest = generate(script, dir, cfg.threads);
    write_run_config(dir, serialize_run_config(cfg));
    std::printf("wrote %zu frames to %s\n", manifest.frames.size(),
                dir.string().c_str());
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  return kExitOk;
}

int cmd_train(const CommonFlags& fl, const std::vector<std::string>& ablate,
              const std::string& resume) {
  RunConfig cfg;
  try {
    cfg = resolve_config(fl, false);
    for (const std::string& name : ablate) apply_variant(&cfg.trainer, name);
    cfg.trainer.validate();
  } catch (const std::exception& e) {
    return config_failure(e);
  }
  const std::string echo = serialize_run_config(cfg);
  std::optional<Trainer> tr;
  try {
    tr.emplace(create_trainer(cfg.trainer, load_train_data(cfg.data_dir)));
    if (!resume.empty()) load_checkpoint(&*tr, resume);
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  const fs::path out = cfg.out_dir;
  try {
    write_run_config(out, echo);
    run_training(&*tr, out, echo);
  } catch (const NumericError& e) {
    const fs::path dump = out / "checkpoint_abort.bspc";
    save_checkpoint(*tr, dump.string(), echo);
    std::fprintf(stderr, "numeric failure at iteration %d: %s\nstate dumped to %s\n",
                 tr->iter, e.what(), dump.string().c_str());
    return kExitNumeric;
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  std::printf("trained %d iterations, %zu gaussians (%zu dynamic), outputs in %s\n",
              tr->iter, tr->scene.size(), tr->dynamic_count(),
              out.string().c_str());
  return kExitOk;
}

int cmd_render(const CommonFlags& fl, const std::string& checkpoint,
               const std::string& pose_spec, int steps, double t_fixed) {
  RunConfig cfg;
  try {
    cfg = resolve_config(fl, false);
    if (pose_spec != "mid" && pose_spec != "spiral")
      throw std::invalid_argument("--pose must be 'mid' or 'spiral'");
  } catch (const std::exception& e) {
    return config_failure(e);
  }
  std::optional<Trainer> tr;
  try {
    tr.emplace(create_trainer(cfg.trainer, load_train_data(cfg.data_dir)));
    load_checkpoint(&*tr, checkpoint);
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  const fs::path out = cfg.out_dir;
  try {
    write_run_config(out, serialize_run_config(cfg));
    int written = 0;
    if (pose_spec == "mid") {
      for (std::size_t f = 0; f < tr->data.frames.size(); ++f) {
        const Image img = render_frame(*tr, static_cast<int>(f));
        char name[32];
        std::snprintf(name, sizeof name, "render_mid_%03zu", f);
        write_image_npy(out / (std::string(name) + ".npy"), img);
        write_png(out / (std::string(name) + ".png"), img);
        ++written;
      }
    } else {
      const int n = steps > 0 ? steps : static_cast<int>(tr->data.frames.size());
      const Pose base = corrected_mid_pose(*tr, tr->data.canonical_frame);
      RenderOptions opts;
      opts.transmittance_floor = cfg.trainer.transmittance_floor;
      opts.threads = cfg.trainer.threads;
      for (int i = 0; i < n; ++i) {
        const double phase = 2.0 * M_PI * i / n;
        const double t =
            t_fixed >= 0.0 ? t_fixed : (i + 0.5) / n;
        Pose offset;
        offset.translation =
            Eigen::Vector3d(0.15 * std::cos(phase), 0.15 * std::sin(phase),
                            0.05 * std::sin(2.0 * phase));
        const Image img =
            render(deformed_scene(*tr, t), offset * base, tr->data.cam, opts);
        char name[32];
        std::snprintf(name, sizeof name, "render_spiral_%03d", i);
        write_image_npy(out / (std::string(name) + ".npy"), img);
        write_png(out / (std::string(name) + ".png"), img);
        ++written;
      }
    }
    std::printf("wrote %d renders to %s\n", written, out.string().c_str());
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  return kExitOk;
}

int cmd_eval(const CommonFlags& fl, const std::string& checkpoint) {
  RunConfig cfg;
  try {
    cfg = resolve_config(fl, false);
  } catch (const std::exception& e) {
    return config_failure(e);
  }
  std::optional<Trainer> tr;
  try {
    tr.emplace(create_trainer(cfg.trainer, load_train_data(cfg.data_dir)));
    load_checkpoint(&*tr, checkpoint);
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  try {
    const fs::path out = cfg.out_dir;
    write_run_config(out, serialize_run_config(cfg));
    const MetricReport report = evaluate(*tr);
    write_text_file(out / "metrics.json", metric_report_json(report));
    const FrameMetrics& a = report.aggregate;
    std::printf(
        "psnr %.3f  psnr_dynamic %.3f  ssim %.4f  lv %.6f  psnr_shift %.3f\n",
        a.psnr, a.psnr_dynamic, a.ssim, a.lv, a.psnr_shift);
    std::printf("report written to %s\n", (out / "metrics.json").string().c_str());
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  return kExitOk;
}

struct AblationRow {
  std::string variant;
  TrainerConfig cfg;
  FrameMetrics agg;
};

int cmd_ablate(const CommonFlags& fl, const std::string& variants_csv) {
  RunConfig cfg;
  std::vector<std::string> variants;
  try {
    cfg = resolve_config(fl, false);
    std::string token;
    for (char c : variants_csv + ",") {
      if (c == ',') {
        if (!token.empty()) variants.push_back(token);
        token.clear();
      } else {
        token.push_back(c);
      }
    }
    if (variants.empty())
      throw std::invalid_argument("--variants must name at least one run");
    for (const std::string& v : variants) {
      TrainerConfig probe = cfg.trainer;
      apply_variant(&probe, v);
      probe.validate();
    }
  } catch (const std::exception& e) {
    return config_failure(e);
  }
  TrainData data;
  try {
    data = load_train_data(cfg.data_dir);
  } catch (const std::exception& e) {
    return data_failure(e);
  }
  const fs::path out = cfg.out_dir;
  std::vector<AblationRow> rows;
  for (const std::string& v : variants) {
    RunConfig vc = cfg;
    apply_variant(&vc.trainer, v);
    const std::string dir_name = normalize_variant(v);
    vc.out_dir = (out / dir_name).string();
    const std::string echo = serialize_run_config(vc);
    Trainer tr = create_trainer(vc.trainer, data);
    try {
      write_run_config(vc.out_dir, echo);
      run_training(&tr, vc.out_dir, echo);
    } catch (const NumericError& e) {
      const fs::path dump = fs::path(vc.out_dir) / "checkpoint_abort.bspc";
      save_checkpoint(tr, dump.string(), echo);
      std::fprintf(stderr,
                   "numeric failure in variant %s at iteration %d: %s\nstate dumped to %s\n",
                   dir_name.c_str(), tr.iter, e.what(), dump.string().c_str());
      return kExitNumeric;
    } catch (const std::exception& e) {
      return data_failure(e);
    }
    const MetricReport report = evaluate(tr);
    write_text_file(fs::path(vc.out_dir) / "metrics.json",
                    metric_report_json(report));
    rows.push_back({dir_name, vc.trainer, report.aggregate});
    std::printf("%-9s psnr %.3f  psnr_dynamic %.3f  ssim %.4f  lv %.6f\n",
                dir_name.c_str(), report.aggregate.psnr,
                report.aggregate.psnr_dynamic, report.aggregate.ssim,
                report.aggregate.lv);
    std::fflush(stdout);
  }

  // One row per variant, plus the ordering checks the ablation exists
  // to answer: the full method should not trail any single ablation,
  // and disabling the pose correction should hurt most.
  std::string csv =
      "variant,psnr,psnr_dynamic,ssim,lv,psnr_shift,ssim_shift,"
      "camera_blur,object_blur,track_loss,static_field\n";
  nlohmann::json doc;
  doc["rows"] = nlohmann::json::array();
  const AblationRow* full = nullptr;
  const AblationRow* wosd = nullptr;
  for (const AblationRow& row : rows) {
    char line[256];
    std::snprintf(line, sizeof line,
                  "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%d,%d,%d\n",
                  row.variant.c_str(), row.agg.psnr, row.agg.psnr_dynamic,
                  row.agg.ssim, row.agg.lv, row.agg.psnr_shift,
                  row.agg.ssim_shift, row.cfg.use_camera_blur ? 1 : 0,
                  row.cfg.use_object_blur ? 1 : 0,
                  row.cfg.use_track_loss ? 1 : 0,
                  row.cfg.use_static_field ? 1 : 0);
    csv += line;
    doc["rows"].push_back({{"variant", row.variant},
                           {"psnr", row.agg.psnr},
                           {"psnr_dynamic", row.agg.psnr_dynamic},
                           {"ssim", row.agg.ssim},
                           {"lv", row.agg.lv},
                           {"psnr_shift", row.agg.psnr_shift},
                           {"ssim_shift", row.agg.ssim_shift},
                           {"camera_blur", row.cfg.use_camera_blur},
                           {"object_blur", row.cfg.use_object_blur},
                           {"track_loss", row.cfg.use_track_loss},
                           {"static_field", row.cfg.use_static_field}});
    if (row.variant == "full") full = &row;
    if (row.variant == "wosd") wosd = &row;
  }
  const double tie = 0.1;
  if (full != nullptr) {
    bool not_below = true;
    bool sd_worst = wosd != nullptr;
    for (const AblationRow& row : rows) {
      if (&row == full) continue;
      if (row.agg.psnr > full->agg.psnr + tie) not_below = false;
      if (wosd != nullptr && &row != wosd && row.variant != "baseline" &&
          row.agg.psnr < wosd->agg.psnr - tie) {
        sd_worst = false;
      }
    }
    doc["ordering"] = {{"tie_tolerance_db", tie},
                       {"full_not_below_ablations", not_below}};
    if (wosd != nullptr) doc["ordering"]["wo_sd_worst"] = sd_worst;
    std::printf("ordering: full_not_below_ablations=%s%s\n",
                not_below ? "true" : "false",
                wosd == nullptr ? ""
                : sd_worst     ? " wo_sd_worst=true"
                               : " wo_sd_worst=false");
  }
  write_text_file(out / "ablation.csv", csv);
  write_text_file(out / "ablation.json", doc.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blur-aware dynamic gaussian splatting pipeline"};
  app.require_subcommand(1);

  CommonFlags fl;
  std::vector<std::string> ablate;
  std::string resume, checkpoint, pose_spec = "mid";
  std::string variants = "full,wo-sd,wo-db,wo-tl,wo-sdf,baseline";
  int steps = 0;
  double t_fixed = -1.0;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("-c,--config", fl.config_path, "run config JSON")
        ->required();
    cmd->add_option("--data-dir", fl.data_dir, "override data_dir");
    if (needs_out) cmd->add_option("--out-dir", fl.out_dir, "override out_dir");
    cmd->add_option("--threads", fl.threads,
                    "thread budget; 0 = logical cores");
    cmd->add_option("--seed", fl.seed, "override the command's seed");
  };

  CLI::App* gen = app.add_subcommand("generate", "render a scripted dataset");
  add_common(gen, false);

  CLI::App* train = app.add_subcommand("train", "fit a dataset");
  add_common(train, true);
  train->add_option("--ablate", ablate,
                    "disable a component (wo-tl, wo-db, wo-sd, wo-sdf, baseline)");
  train->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* render = app.add_subcommand("render", "render a checkpoint");
  add_common(render, true);
  render->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  render->add_option("--pose", pose_spec, "mid (training frames) or spiral");
  render->add_option("--steps", steps, "spiral steps; 0 = frame count");
  render->add_option("--t", t_fixed, "fixed timestamp for spiral renders");

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train and score toggle variants");
  add_common(ablate_cmd, true);
  ablate_cmd->add_option("--variants", variants, "comma-separated variant list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (app.got_subcommand(gen)) return cmd_generate(fl);
  if (app.got_subcommand(train)) return cmd_train(fl, ablate, resume);
  if (app.got_subcommand(render))
    return cmd_render(fl, checkpoint, pose_spec, steps, t_fixed);
  if (app.got_subcommand(eval)) return cmd_eval(fl, checkpoint);
  if (app.got_subcommand(ablate_cmd)) return cmd_ablate(fl, variants);
  return kExitConfig;
}
