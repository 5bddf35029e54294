#include "qsf/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "qsf/checkpoint.hpp"
#include "qsf/data.hpp"
#include "qsf/errors.hpp"
#include "qsf/io.hpp"
#include "qsf/train.hpp"

namespace qsf {
namespace {

std::string stage_dir(const PipelineOptions& opts, Stage stage) {
  return (std::filesystem::path(opts.out_dir) / ("stage" + std::to_string(static_cast<int>(stage))))
      .string();
}

std::string final_path(const PipelineOptions& opts, Stage stage) {
  return (std::filesystem::path(stage_dir(opts, stage)) / "final.qsfc").string();
}

// A finished run is reusable when its saved config matches and its final
// checkpoint loads.
bool reusable(const RunConfig& cfg, const std::string& ckpt_path, double& val_loss) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  if (!fs::exists(dir / "config.json") || !fs::exists(ckpt_path)) return false;
  try {
    const Json saved = Json::parse(read_file((dir / "config.json").string()));
    if (saved != to_json(cfg)) return false;
    const Checkpoint ckpt = load_checkpoint(ckpt_path, cfg.model);
    val_loss = ckpt.metadata.at("final_val_loss").get<double>();
    return std::isfinite(val_loss);
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

RunConfig pipeline_stage_config(const PipelineOptions& opts, Stage stage) {
  RunConfig cfg;
  cfg.model = StageConfig::desk(stage);
  cfg.model.d = opts.d;
  cfg.model.layers = opts.layers;
  cfg.model.seq_len = opts.seq_len;
  cfg.train = TrainConfig::desk(stage);
  cfg.train.steps = opts.steps;
  cfg.train.warmup = std::min(cfg.train.warmup, opts.steps);
  cfg.train.batch_size = opts.batch_size;
  cfg.train.eval_interval = opts.eval_interval;
  cfg.train.eval_batches = opts.eval_batches;
  if (stage == Stage::IV) cfg.train.snapshots = opts.stage4_snapshots;
  cfg.corpus = opts.corpus;
  cfg.seed = opts.seed;
  cfg.out_dir = stage_dir(opts, stage);
  switch (stage) {
    case Stage::I: break;
    case Stage::II: cfg.init_from = final_path(opts, Stage::I); break;
    case Stage::III:
    case Stage::IV: cfg.init_from = final_path(opts, Stage::II); break;
  }
  return cfg;
}

PipelineResult run_pipeline(const PipelineOptions& opts) {
  const Corpus corpus = Corpus::from_file(opts.corpus);
  PipelineResult result;
  for (Stage stage : {Stage::I, Stage::II, Stage::III, Stage::IV}) {
    const int i = static_cast<int>(stage) - 1;
    const RunConfig cfg = pipeline_stage_config(opts, stage);
    const std::string path = final_path(opts, stage);
    result.checkpoints[i] = path;
    result.parameters[i] = Model(cfg.model).parameter_count();
    double val = 0.0;
    if (opts.reuse && reusable(cfg, path, val)) {
      result.val_loss[i] = val;
      result.reused[i] = true;
      if (opts.log) opts.log("stage " + to_string(stage) + ": reusing " + path);
      continue;
    }
    if (opts.log) opts.log("stage " + to_string(stage) + ": training into " + cfg.out_dir);
    const TrainResult run = train_stage(cfg, corpus);
    result.val_loss[i] = run.final_val_loss;
    if (opts.log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "stage %s: final val loss %.4f", to_string(stage).c_str(),
                    run.final_val_loss);
      opts.log(buf);
    }
  }
  return result;
}

std::string pipeline_table(const PipelineResult& result) {
  std::string out = "stage  params     val_loss  perplexity\n";
  for (int i = 0; i < 4; ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-6s %-10zu %-9.4f %.3f\n",
                  to_string(static_cast<Stage>(i + 1)).c_str(), result.parameters[i],
                  result.val_loss[i], std::exp(result.val_loss[i]));
    out += buf;
  }
  return out;
}

}  // namespace qsf
