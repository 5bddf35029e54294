#pragma once

// The four-stage desk pipeline: Stage I from scratch, Stage II from I,
// Stage III from II, and Stage IV from II under Stage III's transfer rules.

#include <array>
#include <cstdint>
#include <functional>
#include <string>

#include "qsf/config.hpp"

namespace qsf {

struct PipelineOptions {
  std::string corpus;
  std::string out_dir = "runs/pipeline";
  std::uint64_t seed = 1;
  // Overrides applied to every stage's desk defaults.
  int steps = 2000;
  int d = 64;
  int layers = 4;
  int seq_len = 128;
  int batch_size = 16;
  int eval_interval = 100;
  int eval_batches = 50;
  // Extra Stage IV snapshots (step_<n>.qsfc).
  std::vector<int> stage4_snapshots;
  // Skip a stage whose run directory already holds a final checkpoint
  // produced from an identical config.
  bool reuse = true;
  // Called with a one-line progress message.
  std::function<void(const std::string&)> log;
};

struct PipelineResult {
  // Indexed by stage - 1.
  std::array<std::string, 4> checkpoints;
  std::array<double, 4> val_loss{};
  std::array<std::size_t, 4> parameters{};
  std::array<bool, 4> reused{};
};

RunConfig pipeline_stage_config(const PipelineOptions& opts, Stage stage);
PipelineResult run_pipeline(const PipelineOptions& opts);
// Fixed-width comparison table, one row per stage.
std::string pipeline_table(const PipelineResult& result);

}  // namespace qsf
