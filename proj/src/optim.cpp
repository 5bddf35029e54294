#include "qsf/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qsf/errors.hpp"

namespace qsf {

double onecycle_lr(long step, const Schedule& s) {
  if (step >= s.max_steps) return s.lr_min;
  if (step <= 0) return s.warmup == 0 ? s.lr_max : 0.0;
  if (step <= s.warmup) {
    return s.lr_max * static_cast<double>(step) / static_cast<double>(s.warmup);
  }
  const double progress = static_cast<double>(step - s.warmup) /
                          static_cast<double>(s.max_steps - s.warmup);
  return s.lr_min + (s.lr_max - s.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_global_norm(ad::Gradients& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

StepReport adamw_step(ad::ParamStore& params, ad::Gradients& grads, OptimizerState& state,
                      double lr, const AdamWConfig& cfg) {
  if (grads.size() != params.size()) {
    throw DimensionError("adamw_step: gradients do not match the parameter store");
  }
  if (!grads.all_finite()) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads.has(i) && !grads.at(i).allFinite()) {
        throw NumericError("adamw_step: non-finite gradient for '" + params.at(i).name +
                           "'; step aborted");
      }
    }
  }
  StepReport report;
  report.grad_norm = clip_global_norm(grads, cfg.clip);
  report.clipped = report.grad_norm > cfg.clip;

  state.slots.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = params.at(i);
    if (p.frozen || !grads.has(i)) continue;
    const ad::Matrix& g = grads.at(i);
    auto& slot = state.slots[i];
    if (slot.m.size() == 0) {
      slot.m = ad::Matrix::Zero(p.value.rows(), p.value.cols());
      slot.v = ad::Matrix::Zero(p.value.rows(), p.value.cols());
    }
    ++slot.step;
    slot.m = cfg.beta1 * slot.m + (1.0 - cfg.beta1) * g;
    slot.v = cfg.beta2 * slot.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
    if (p.decay && cfg.weight_decay > 0.0) p.value *= 1.0 - lr * cfg.weight_decay;
    p.value.array() -=
        lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + cfg.eps);
  }
  return report;
}

}  // namespace qsf
