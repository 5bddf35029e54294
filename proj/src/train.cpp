#include "qsf/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include "qsf/errors.hpp"
#include "qsf/io.hpp"
#include "qsf/optim.hpp"

namespace qsf {
namespace {

constexpr std::uint64_t kEvalSeedSalt = 0x9e3779b97f4a7c15ULL;

bool matches(std::string_view name, std::string_view pattern) {
  if (!pattern.empty() && pattern.back() == '*') {
    pattern.remove_suffix(1);
    return name.substr(0, pattern.size()) == pattern;
  }
  return name == pattern;
}

bool stage_one_transfer(std::string_view name) {
  return name == "tok_emb" || name == "pos_emb" || name == "final_norm.gain" ||
         name == "final_norm.bias" || name == "out_proj";
}

void apply_freeze(ad::ParamStore& store, const std::vector<std::string>& patterns,
                  std::vector<std::string>& frozen) {
  for (const std::string& pattern : patterns) {
    bool hit = false;
    for (ad::Parameter& p : store.params()) {
      if (!matches(p.name, pattern)) continue;
      hit = true;
      if (!p.frozen) {
        p.frozen = true;
        frozen.push_back(p.name);
      }
    }
    if (!hit) throw ConfigError("train.freeze: '" + pattern + "' matches no parameter");
  }
}

std::string join_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

std::string format_loss(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

TransferResult transfer_and_freeze(const Checkpoint& source, const Model& target,
                                   ad::ParamStore& store, const std::vector<std::string>& freeze) {
  const StageConfig& src = source.config;
  const StageConfig& dst = target.config();
  std::ostringstream problems;
  if (src.d != dst.d) problems << " d " << src.d << " vs " << dst.d << ";";
  if (src.vocab != dst.vocab) problems << " vocab " << src.vocab << " vs " << dst.vocab << ";";
  if (src.seq_len != dst.seq_len) {
    problems << " seq_len " << src.seq_len << " vs " << dst.seq_len << ";";
  }

  TransferResult result;
  for (ad::Parameter& p : store.params()) {
    const bool eligible = src.stage == Stage::I ? stage_one_transfer(p.name)
                                                : source.params.contains(p.name);
    if (!eligible || !source.params.contains(p.name)) {
      result.fresh.push_back(p.name);
      continue;
    }
    const ad::Matrix& from = source.params.at(p.name).value;
    if (from.rows() != p.value.rows() || from.cols() != p.value.cols()) {
      problems << " '" << p.name << "' is " << from.rows() << "x" << from.cols() << " in source, "
               << p.value.rows() << "x" << p.value.cols() << " in target;";
      continue;
    }
    result.transferred.push_back(p.name);
  }
  const std::string text = problems.str();
  if (!text.empty()) throw TransferError("cannot transfer from the source checkpoint:" + text);

  for (const std::string& name : result.transferred) {
    store.at(name).value = source.params.at(name).value;
  }
  apply_freeze(store, freeze, result.frozen);
  return result;
}

double batch_gradients(const Model& model, const ad::ParamStore& store, const Batch& batch,
                       bool training, std::uint64_t dropout_seed, int threads,
                       ad::Gradients& grads) {
  const std::size_t n = batch.inputs.size();
  std::vector<ad::Gradients> per(n);
  std::vector<double> losses(n, 0.0);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t b) {
    try {
      ad::Tape tape(&store);
      ForwardOptions opts;
      opts.training = training;
      opts.dropout_seed = dropout_seed * 1315423911ULL + b;
      const ad::Var loss = model.loss(tape, batch.inputs[b], batch.targets[b], opts);
      losses[b] = tape.value(loss)(0, 0);
      per[b] = tape.backward(loss);
    } catch (...) {
      errors[b] = std::current_exception();
    }
  };

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t b = 0; b < n; ++b) work(b);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t b = static_cast<std::size_t>(w); b < n; b += workers) work(b);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  grads = ad::Gradients(store.size());
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    grads.accumulate(per[b]);
    total += losses[b];
  }
  const double inv = 1.0 / static_cast<double>(n);
  grads.scale(inv);
  return total * inv;
}

double evaluate(const Model& model, const ad::ParamStore& store,
                const std::vector<Batch>& batches) {
  double total = 0.0;
  std::size_t count = 0;
  for (const Batch& batch : batches) {
    for (std::size_t b = 0; b < batch.inputs.size(); ++b) {
      ad::Tape tape(&store);
      total += tape.value(model.loss(tape, batch.inputs[b], batch.targets[b]))(0, 0);
      ++count;
    }
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : total / static_cast<double>(count);
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,split,loss,lr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + r.split + ',' + format_loss(r.loss) + ',' +
           format_loss(r.lr) + '\n';
  }
  return out;
}

TrainResult train_stage(const RunConfig& cfg, const Corpus& corpus) {
  cfg.validate();
  const Model model(cfg.model);
  const TrainConfig& tc = cfg.train;
  const int threads = effective_threads(cfg);

  ad::ParamStore store;
  model.init_parameters(store, cfg.seed);

  TrainResult result;
  const std::vector<std::string>& freeze = tc.freeze;
  if (!cfg.init_from.empty()) {
    const Checkpoint source = load_checkpoint(cfg.init_from);
    if (source.config.stage >= cfg.model.stage && cfg.model.stage != Stage::IV) {
      throw ConfigError("init_from: a stage " + to_string(cfg.model.stage) +
                        " run cannot start from a stage " + to_string(source.config.stage) +
                        " checkpoint");
    }
    if (source.config.stage == Stage::I && cfg.model.stage != Stage::II) {
      throw ConfigError("init_from: stage " + to_string(cfg.model.stage) +
                        " starts from a stage II or III checkpoint, not stage I");
    }
    result.transfer = transfer_and_freeze(source, model, store, freeze);
    if (tc.freeze_transferred) {
      for (const auto& name : result.transfer.transferred) {
        ad::Parameter& p = store.at(name);
        if (!p.frozen) {
          p.frozen = true;
          result.transfer.frozen.push_back(name);
        }
      }
    }
  } else {
    apply_freeze(store, freeze, result.transfer.frozen);
    for (const auto& p : store.params()) result.transfer.fresh.push_back(p.name);
  }
  const long freeze_until = result.transfer.frozen.empty() ? 0 : tc.freeze_steps();
  if (freeze_until == 0) {
    for (auto& p : store.params()) p.frozen = false;
  }

  write_file_atomic(join_path(cfg.out_dir, "config.json"), to_json(cfg).dump(2) + "\n");

  const std::vector<Batch> eval_set = fixed_eval_batches(
      corpus, tc.eval_batches, tc.batch_size, cfg.model.seq_len, cfg.seed ^ kEvalSeedSalt);
  std::mt19937_64 rng(cfg.seed);
  const Schedule schedule{tc.lr_max, tc.lr_min, tc.warmup, tc.steps};
  const AdamWConfig adam{tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay, tc.clip};
  OptimizerState opt;

  const bool has_zeta = cfg.model.stage == Stage::III || cfg.model.stage == Stage::IV;
  Json val_history = Json::array();
  Json unitarity = Json::array();
  ad::ParamStore last_good = store;
  long last_good_step = 0;
  const std::string last_good_path = join_path(cfg.out_dir, "last_good.qsfc");

  auto make_checkpoint = [&](const ad::ParamStore& params, long step, bool with_optimizer) {
    Checkpoint ckpt;
    ckpt.config = cfg.model;
    ckpt.params = params;
    if (with_optimizer) ckpt.optimizer = opt;
    Json meta;
    meta["stage"] = static_cast<int>(cfg.model.stage);
    meta["step"] = step;
    meta["seed"] = cfg.seed;
    meta["corpus"] = cfg.corpus;
    meta["init_from"] = cfg.init_from;
    meta["transferred"] = result.transfer.transferred;
    meta["frozen_until"] = freeze_until;
    meta["final_train_loss"] = result.final_train_loss;
    meta["final_val_loss"] = result.final_val_loss;
    meta["val_history"] = val_history;
    if (has_zeta) meta["zeta_trace"] = to_json(result.zeta);
    if (cfg.model.stage == Stage::IV) meta["unitarity"] = unitarity;
    ckpt.metadata = std::move(meta);
    return ckpt;
  };

  auto diverge = [&](const std::string& why, long step) {
    save_checkpoint(make_checkpoint(last_good, last_good_step, false), last_good_path);
    throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + why +
                              "; last good parameters (step " + std::to_string(last_good_step) +
                              ") saved to '" + last_good_path + "'",
                          last_good_path);
  };

  auto run_eval = [&](long step, double lr) {
    const double val = evaluate(model, store, eval_set);
    result.metrics.push_back({step, "val", val, lr});
    if (!std::isfinite(val)) diverge("validation loss is not finite", step);
    result.final_val_loss = val;
    val_history.push_back({step, val});
    if (has_zeta) result.zeta.append(step, model.zeta_values(store));
    if (cfg.model.stage == Stage::IV) {
      double defect = 0.0;
      double unit = 0.0;
      for (const RealMatrix& u : model.koopman_operators(store)) {
        defect = std::max(defect, orthogonality_defect(u));
        for (const Complex& l : eigenvalues(u)) unit = std::max(unit, std::abs(std::abs(l) - 1.0));
      }
      unitarity.push_back({{"step", step}, {"orthogonality_defect", defect},
                           {"max_unit_deviation", unit}});
    }
    last_good = store;
    last_good_step = step;
  };

  run_eval(0, onecycle_lr(0, schedule));
  for (long step = 1; step <= tc.steps; ++step) {
    if (freeze_until > 0 && step == freeze_until + 1) {
      for (auto& p : store.params()) p.frozen = false;
    }
    const double lr = onecycle_lr(step, schedule);
    const Batch batch =
        sample_batch(corpus, Split::Train, tc.batch_size, cfg.model.seq_len, rng);
    ad::Gradients grads;
    const double loss = batch_gradients(model, store, batch, true,
                                        cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step),
                                        threads, grads);
    result.metrics.push_back({step, "train", loss, lr});
    if (!std::isfinite(loss)) diverge("training loss is not finite", step);
    if (step == 1) result.first_train_loss = loss;
    result.final_train_loss = loss;
    try {
      adamw_step(store, grads, opt, lr, adam);
    } catch (const NumericError& e) {
      diverge(e.what(), step);
    }
    if (step % tc.eval_interval == 0 || step == tc.steps) run_eval(step, lr);
    if (std::find(tc.snapshots.begin(), tc.snapshots.end(), step) != tc.snapshots.end()) {
      save_checkpoint(make_checkpoint(store, step, false),
                      join_path(cfg.out_dir, "step_" + std::to_string(step) + ".qsfc"));
    }
  }

  result.final = make_checkpoint(store, tc.steps, true);
  result.checkpoint_path = join_path(cfg.out_dir, "final.qsfc");
  write_file_atomic(join_path(cfg.out_dir, "metrics.csv"), metrics_csv(result.metrics));
  if (has_zeta) {
    const std::string zeta_path = join_path(cfg.out_dir, "zeta.csv");
    export_zeta_csv(result.zeta, zeta_path, zeta_summary_path(zeta_path));
  }
  save_checkpoint(result.final, result.checkpoint_path);
  return result;
}

std::vector<int> generate_tokens(const Checkpoint& ckpt, std::span<const int> prompt,
                                 const GenerateOptions& opts) {
  const Model model(ckpt.config);
  const int n = ckpt.config.seq_len;
  if (prompt.empty()) throw RangeError("generate: the prompt is empty");
  if (static_cast<int>(prompt.size()) > n) {
    throw RangeError("generate: prompt of " + std::to_string(prompt.size()) +
                     " tokens exceeds seq_len " + std::to_string(n));
  }
  if (!(opts.temperature >= 0.0)) throw RangeError("generate: temperature must be >= 0");
  if (opts.max_tokens < 0) throw RangeError("generate: max_tokens must be >= 0");

  std::vector<int> tokens(prompt.begin(), prompt.end());
  std::mt19937_64 rng(opts.seed);
  for (int k = 0; k < opts.max_tokens; ++k) {
    const std::size_t start = tokens.size() > static_cast<std::size_t>(n) ? tokens.size() - n : 0;
    const std::span<const int> window(tokens.data() + start, tokens.size() - start);
    const RealMatrix logits = model.infer_logits(ckpt.params, window);
    const RealVector last = logits.row(logits.rows() - 1).transpose();
    int next = 0;
    if (opts.temperature == 0.0) {
      for (Eigen::Index i = 1; i < last.size(); ++i) {
        if (last(i) > last(next)) next = static_cast<int>(i);
      }
    } else {
      const RealVector z = last / opts.temperature;
      const RealVector p = (z.array() - z.maxCoeff()).exp().matrix();
      const double u =
          static_cast<double>(rng() >> 11) * 0x1.0p-53 * p.sum();
      double acc = 0.0;
      next = static_cast<int>(p.size()) - 1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    tokens.push_back(next);
  }
  return tokens;
}

std::string generate(const Checkpoint& ckpt, std::string_view prompt,
                     const GenerateOptions& opts) {
  return detokenize(generate_tokens(ckpt, tokenize(prompt), opts));
}

}  // namespace qsf
