#include "qsf/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <initializer_list>

#include "qsf/errors.hpp"
#include "qsf/io.hpp"

namespace qsf {
namespace {

void reject_unknown(const Json& j, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

TrainConfig TrainConfig::desk(Stage stage) {
  TrainConfig cfg;
  cfg.freeze_transferred = stage == Stage::II;
  return cfg;
}

void TrainConfig::validate() const {
  if (steps <= 0) throw ConfigError("train.steps: must be positive");
  if (batch_size <= 0) throw ConfigError("train.batch_size: must be positive");
  if (!(lr_max > 0.0)) throw ConfigError("train.lr_max: must be positive");
  if (!(lr_min >= 0.0) || lr_min > lr_max) {
    throw ConfigError("train.lr_min: must lie in [0, lr_max]");
  }
  if (warmup < 0 || warmup > steps) throw ConfigError("train.warmup: must lie in [0, steps]");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps: must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be >= 0");
  if (!(clip > 0.0)) throw ConfigError("train.clip: must be positive");
  if (eval_interval <= 0) throw ConfigError("train.eval_interval: must be positive");
  if (eval_batches <= 0) throw ConfigError("train.eval_batches: must be positive");
  if (!(freeze_fraction >= 0.0 && freeze_fraction <= 1.0)) {
    throw ConfigError("train.freeze_fraction: must lie in [0, 1]");
  }
  if (threads <= 0) throw ConfigError("train.threads: must be positive");
  for (int s : snapshots) {
    if (s <= 0 || s > steps) throw ConfigError("train.snapshots: steps must lie in [1, steps]");
  }
}

int TrainConfig::freeze_steps() const {
  return static_cast<int>(std::lround(freeze_fraction * steps));
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (corpus.empty()) throw ConfigError("corpus: path is required");
  if (out_dir.empty()) throw ConfigError("out_dir: path is required");
  if (!(neutral_tol > 0.0)) throw ConfigError("neutral_tol: must be positive");
  if (model.stage != Stage::I && init_from.empty()) {
    throw ConfigError("init_from: stage " + to_string(model.stage) +
                      " requires a checkpoint to transfer from");
  }
}

Json to_json(const StageConfig& cfg) {
  Json j;
  j["stage"] = static_cast<int>(cfg.stage);
  j["d"] = cfg.d;
  j["layers"] = cfg.layers;
  j["d_ff"] = cfg.d_ff;
  j["vocab"] = cfg.vocab;
  j["seq_len"] = cfg.seq_len;
  j["norm_mode"] = to_string(cfg.norm_mode);
  j["ffn_mode"] = to_string(cfg.ffn_mode);
  j["dropout"] = cfg.dropout;
  j["heads"] = cfg.heads;
  j["init_std"] = cfg.init_std;
  j["zeta_init"] = cfg.zeta_init;
  return j;
}

StageConfig stage_config_from_json(const Json& j) {
  const std::string where = "model";
  reject_unknown(j,
                 {"stage", "d", "layers", "d_ff", "vocab", "seq_len", "norm_mode", "ffn_mode",
                  "dropout", "heads", "init_std", "zeta_init"},
                 where);
  int stage = 2;
  read(j, "stage", stage, where);
  StageConfig cfg = StageConfig::desk(stage_from_int(stage));
  read(j, "d", cfg.d, where);
  read(j, "layers", cfg.layers, where);
  read(j, "d_ff", cfg.d_ff, where);
  read(j, "vocab", cfg.vocab, where);
  read(j, "seq_len", cfg.seq_len, where);
  std::string norm = to_string(cfg.norm_mode);
  std::string ffn = to_string(cfg.ffn_mode);
  read(j, "norm_mode", norm, where);
  read(j, "ffn_mode", ffn, where);
  cfg.norm_mode = parse_norm_mode(norm);
  cfg.ffn_mode = parse_ffn_mode(ffn);
  read(j, "dropout", cfg.dropout, where);
  read(j, "heads", cfg.heads, where);
  read(j, "init_std", cfg.init_std, where);
  read(j, "zeta_init", cfg.zeta_init, where);
  cfg.validate();
  return cfg;
}

Json to_json(const TrainConfig& cfg) {
  Json j;
  j["steps"] = cfg.steps;
  j["batch_size"] = cfg.batch_size;
  j["lr_max"] = cfg.lr_max;
  j["lr_min"] = cfg.lr_min;
  j["warmup"] = cfg.warmup;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["weight_decay"] = cfg.weight_decay;
  j["clip"] = cfg.clip;
  j["eval_interval"] = cfg.eval_interval;
  j["eval_batches"] = cfg.eval_batches;
  j["freeze"] = cfg.freeze;
  j["freeze_transferred"] = cfg.freeze_transferred;
  j["freeze_fraction"] = cfg.freeze_fraction;
  j["threads"] = cfg.threads;
  j["snapshots"] = cfg.snapshots;
  return j;
}

Json to_json(const RunConfig& cfg) {
  Json j;
  j["stage"] = static_cast<int>(cfg.model.stage);
  j["corpus"] = cfg.corpus;
  j["out_dir"] = cfg.out_dir;
  j["init_from"] = cfg.init_from;
  j["seed"] = cfg.seed;
  j["strict_deterministic"] = cfg.strict_deterministic;
  j["neutral_tol"] = cfg.neutral_tol;
  Json model = to_json(cfg.model);
  model.erase("stage");
  j["model"] = std::move(model);
  j["train"] = to_json(cfg.train);
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  const std::string where = "config";
  reject_unknown(j,
                 {"stage", "corpus", "out_dir", "init_from", "seed", "strict_deterministic",
                  "neutral_tol", "model", "train"},
                 where);
  RunConfig cfg;
  int stage = 2;
  read(j, "stage", stage, where);
  const Stage s = stage_from_int(stage);

  Json model = j.contains("model") ? j.at("model") : Json::object();
  if (!model.is_object()) throw ConfigError("config.model: expected a JSON object");
  if (model.contains("stage")) throw ConfigError("config.model: 'stage' belongs at top level");
  model["stage"] = stage;
  cfg.model = stage_config_from_json(model);

  cfg.train = TrainConfig::desk(s);
  if (j.contains("train")) {
    const Json& t = j.at("train");
    const std::string tw = "train";
    reject_unknown(t,
                   {"steps", "batch_size", "lr_max", "lr_min", "warmup", "beta1", "beta2",
                    "adam_eps", "weight_decay", "clip", "eval_interval", "eval_batches",
                    "freeze", "freeze_transferred", "freeze_fraction", "threads", "snapshots"},
                   tw);
    read(t, "steps", cfg.train.steps, tw);
    read(t, "batch_size", cfg.train.batch_size, tw);
    read(t, "lr_max", cfg.train.lr_max, tw);
    read(t, "lr_min", cfg.train.lr_min, tw);
    read(t, "warmup", cfg.train.warmup, tw);
    read(t, "beta1", cfg.train.beta1, tw);
    read(t, "beta2", cfg.train.beta2, tw);
    read(t, "adam_eps", cfg.train.adam_eps, tw);
    read(t, "weight_decay", cfg.train.weight_decay, tw);
    read(t, "clip", cfg.train.clip, tw);
    read(t, "eval_interval", cfg.train.eval_interval, tw);
    read(t, "eval_batches", cfg.train.eval_batches, tw);
    read(t, "freeze", cfg.train.freeze, tw);
    read(t, "freeze_transferred", cfg.train.freeze_transferred, tw);
    read(t, "freeze_fraction", cfg.train.freeze_fraction, tw);
    read(t, "threads", cfg.train.threads, tw);
    read(t, "snapshots", cfg.train.snapshots, tw);
  }
  read(j, "corpus", cfg.corpus, where);
  read(j, "out_dir", cfg.out_dir, where);
  read(j, "init_from", cfg.init_from, where);
  read(j, "seed", cfg.seed, where);
  read(j, "strict_deterministic", cfg.strict_deterministic, where);
  read(j, "neutral_tol", cfg.neutral_tol, where);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

int effective_threads(const RunConfig& cfg) {
  if (cfg.strict_deterministic) return 1;
  if (const char* env = std::getenv("QSF_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return cfg.train.threads;
}

}  // namespace qsf
