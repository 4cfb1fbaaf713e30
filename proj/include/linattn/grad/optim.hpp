#pragma once

#include <map>
#include <set>
#include <string>

#include "linattn/grad/tensor.hpp"

namespace linattn::grad {

struct OptimHyper {
  double lr0 = 1e-3;
  double lr_min = 1e-6;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long total_steps = 0;
};

// Half-cosine interpolation from lr0 (step 0) down to lr_min (step = total).
double cosine_lr(long step, long total_steps, double lr0 = 1e-3, double lr_min = 1e-6);

// AdamW with decoupled weight decay; parameters in `decay_exempt` (the
// recurrence vectors) are never decayed.
struct OptimState {
  OptimHyper hyper;
  long step = 0;
  ParamSet m;  // first moments, aligned with the parameter order
  ParamSet v;  // second moments
  std::set<std::string> decay_exempt;

  static OptimState init(const ParamSet& params, OptimHyper hyper,
                         std::set<std::string> exempt = {});
};

void adamw_step(ParamSet& params, const std::map<std::string, Tensor>& grads,
                OptimState& state);

}  // namespace linattn::grad
