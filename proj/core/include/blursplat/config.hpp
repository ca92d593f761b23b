// One validated run document driving every command: scene script,
// dataset and output locations, thread budget and the trainer
// configuration. Unknown keys are rejected at every level. The
// serialized effective document round-trips through the parser, so the
// exact configuration of a run can be stored next to its outputs and
// inside every checkpoint it writes.
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "blursplat/trainer.hpp"

namespace blursplat {

struct RunConfig {
  // Scene script document for dataset generation; null when the run
  // only consumes an existing dataset. Validated at parse time.
  nlohmann::json scene;
  std::string data_dir = "dataset";
  std::string out_dir = "run";
  int threads = 0;  // 0 resolves to the hardware concurrency
  TrainerConfig trainer;
};

// Strict parses; throw std::invalid_argument naming the offending key.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
TrainerConfig parse_trainer_config(const nlohmann::json& doc);

// Effective document with every field written out; the trainer thread
// count is run-level and resolved by the caller, never a document key.
// parse_run_config(run_config_json(cfg)) reproduces cfg for threads > 0.
nlohmann::json run_config_json(const RunConfig& cfg);
nlohmann::json trainer_config_json(const TrainerConfig& cfg);

// Indented dump with trailing newline, byte-stable for determinism
// checks.
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace blursplat
