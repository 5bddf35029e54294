#pragma once

// Stage training: parameter transfer between stages, the AdamW/OneCycle loop
// with periodic held-out evaluation, and autoregressive generation.
//
// A run directory holds:
//   config.json         effective run config
//   metrics.csv         step,split,loss,lr (train every step, val every eval)
//   zeta.csv            Stages III-IV, with zeta_summary.csv
//   step_<n>.qsfc       optional snapshots
//   final.qsfc          final parameters, optimizer state and training record
//   last_good.qsfc      written only when a run diverges

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "qsf/checkpoint.hpp"
#include "qsf/config.hpp"
#include "qsf/data.hpp"
#include "qsf/model.hpp"
#include "qsf/spectrum.hpp"

namespace qsf {

struct TransferResult {
  std::vector<std::string> transferred;
  std::vector<std::string> fresh;
  std::vector<std::string> frozen;
};

/// Copies tensors from `source` into a store already holding the target's
/// initial values. From Stage I only the embeddings, final norm and output
/// projection move; from later stages every tensor whose name exists in both
/// moves. Freeze entries are exact names or prefixes ending in '*'.
/// Throws TransferError when d, vocab or seq_len differ or a transferred
/// tensor changes shape (naming every offender), ConfigError when a freeze
/// entry matches nothing.
TransferResult transfer_and_freeze(const Checkpoint& source, const Model& target,
                                   ad::ParamStore& store, const std::vector<std::string>& freeze);

// Mean cross-entropy over every sequence of every batch, no dropout.
double evaluate(const Model& model, const ad::ParamStore& store, const std::vector<Batch>& batches);

/// Mean loss over the batch and its gradients, one tape per sequence. With
/// threads > 1 sequences are split across workers; per-sequence gradients are
/// always reduced in sequence order, so the result does not depend on the
/// thread count.
double batch_gradients(const Model& model, const ad::ParamStore& store, const Batch& batch,
                       bool training, std::uint64_t dropout_seed, int threads,
                       ad::Gradients& grads);

struct MetricRow {
  long step = 0;
  std::string split;
  double loss = 0.0;
  double lr = 0.0;
};

std::string metrics_csv(const std::vector<MetricRow>& rows);

struct TrainResult {
  Checkpoint final;
  std::string checkpoint_path;
  std::vector<MetricRow> metrics;
  ZetaTrace zeta;
  TransferResult transfer;
  double first_train_loss = 0.0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
};

/// Runs one stage per cfg and writes the run directory. Stages II-IV start
/// from cfg.init_from. Throws DivergenceError, after writing last_good.qsfc,
/// when a loss or gradient stops being finite.
TrainResult train_stage(const RunConfig& cfg, const Corpus& corpus);

struct GenerateOptions {
  int max_tokens = 200;
  // 0 selects greedy decoding; ties go to the lowest token id.
  double temperature = 0.0;
  std::uint64_t seed = 1;
};

/// Appends up to max_tokens sampled tokens to the prompt and returns the whole
/// sequence. The model sees the last seq_len tokens. Throws RangeError for an
/// empty prompt or one longer than seq_len.
std::vector<int> generate_tokens(const Checkpoint& ckpt, std::span<const int> prompt,
                                 const GenerateOptions& opts);
std::string generate(const Checkpoint& ckpt, std::string_view prompt, const GenerateOptions& opts);

}  // namespace qsf
