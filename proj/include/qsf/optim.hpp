#pragma once

#include <vector>

#include "qsf/autodiff.hpp"

namespace qsf {

struct Schedule {
  double lr_max = 1e-3;
  double lr_min = 2e-5;
  long warmup = 100;
  long max_steps = 2000;
};

/// OneCycle as linear warmup 0 -> lr_max over `warmup` steps followed by a
/// cosine decay lr_max -> lr_min ending at max_steps. Steps past max_steps
/// clamp to lr_min.
double onecycle_lr(long step, const Schedule& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  // Global-norm clipping threshold applied before the update.
  double clip = 1.0;
};

// First/second moments and step count per parameter, aligned with the
// ParamStore index. Slots are created on a parameter's first update.
struct OptimizerState {
  struct Slot {
    ad::Matrix m;
    ad::Matrix v;
    long step = 0;
  };
  std::vector<Slot> slots;
};

// Scales grads in place so their global norm is at most max_norm and returns
// the norm before clipping.
double clip_global_norm(ad::Gradients& grads, double max_norm);

struct StepReport {
  double grad_norm = 0.0;
  bool clipped = false;
};

/// One decoupled-weight-decay Adam step. Clips grads first. Frozen parameters
/// and parameters without a gradient are left untouched, moments included.
/// Throws NumericError, before modifying anything, if a gradient is not
/// finite.
StepReport adamw_step(ad::ParamStore& params, ad::Gradients& grads, OptimizerState& state,
                      double lr, const AdamWConfig& cfg);

}  // namespace qsf
