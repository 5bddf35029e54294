#pragma once

// Run configuration: JSON file with CLI overrides. Every object level rejects
// unknown keys.
//
// {
//   "stage": 3,
//   "corpus": "data/stories.txt",
//   "out_dir": "runs/stage3",
//   "init_from": "runs/stage2/final.qsfc",
//   "seed": 1,
//   "strict_deterministic": false,
//   "neutral_tol": 0.02,
//   "model": { "d": 64, "layers": 4, "d_ff": 256, "vocab": 256, "seq_len": 128,
//              "norm_mode": "layernorm", "ffn_mode": "none", "dropout": 0.0,
//              "heads": 1, "init_std": 0.02, "zeta_init": 1.0 },
//   "train": { "steps": 2000, "batch_size": 16, "lr_max": 1e-3, "lr_min": 2e-5,
//              "warmup": 100, "beta1": 0.9, "beta2": 0.95, "adam_eps": 1e-8,
//              "weight_decay": 0.1, "clip": 1.0, "eval_interval": 100,
//              "eval_batches": 50, "freeze": [], "freeze_transferred": false,
//              "freeze_fraction": 0.25, "threads": 1,
//              "snapshots": [] }
// }
//
// Model defaults depend on the stage (see StageConfig::desk); keys present in
// "model" override them.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qsf/model.hpp"

namespace qsf {

using Json = nlohmann::ordered_json;

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double lr_max = 1e-3;
  double lr_min = 2e-5;
  int warmup = 100;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double clip = 1.0;
  int eval_interval = 100;
  int eval_batches = 50;
  // Parameters held frozen for the first freeze_fraction of the steps.
  std::vector<std::string> freeze;
  // Adds every tensor transferred from the init checkpoint to the frozen set.
  bool freeze_transferred = false;
  double freeze_fraction = 0.25;
  int threads = 1;
  // Extra checkpoints written as step_<n>.qsfc.
  std::vector<int> snapshots;

  // Stage II uses the two-phase frozen-transfer schedule by default.
  static TrainConfig desk(Stage stage);
  void validate() const;
  int freeze_steps() const;
};

struct RunConfig {
  StageConfig model = StageConfig::desk(Stage::II);
  TrainConfig train = TrainConfig::desk(Stage::II);
  std::string corpus;
  std::string out_dir = "runs/default";
  std::string init_from;
  std::uint64_t seed = 1;
  bool strict_deterministic = false;
  double neutral_tol = 0.02;

  // Throws ConfigError naming the field.
  void validate() const;
};

Json to_json(const StageConfig& cfg);
// Starts from StageConfig::desk(stage) and applies the keys present.
StageConfig stage_config_from_json(const Json& j);

Json to_json(const TrainConfig& cfg);
Json to_json(const RunConfig& cfg);

RunConfig run_config_from_json(const Json& j);
// Throws IoError if the file cannot be read, ConfigError if it does not parse
// or validate.
RunConfig load_run_config(const std::string& path);

// Worker thread count: QSF_THREADS when set, else the configured value;
// 1 in strict-deterministic mode.
int effective_threads(const RunConfig& cfg);

}  // namespace qsf
