#pragma once

#include <functional>
#include <vector>

#include "linattn/grad/models.hpp"
#include "linattn/grad/optim.hpp"

namespace linattn::grad {

struct TrainConfig {
  ArchSpec arch;
  LossKind loss = LossKind::kMse;
  long iterations = 0;
  int batch = 64;
  int seq_len = 32;
  OptimHyper optim;  // total_steps is set from iterations when 0
  uint64_t seed = 0;
  int eval_every = 0;  // 0: iterations / 50
  int final_eval_batches = 32;
};

// A fresh batch from the stream; every training iteration draws once.
using BatchGenerator = std::function<models::SequenceBatch(num::Rng&)>;

struct TrainCallbacks {
  // Invoked at the checkpoint cadence configured by the caller.
  std::function<void(long step, const ParamSet&, double train_loss)> on_checkpoint;
  int checkpoint_every = 0;
  std::function<void(long step, double train_loss, double val_loss)> on_eval;
};

struct TrainResult {
  ParamSet params;
  std::vector<std::pair<long, double>> train_trace;
  std::vector<std::pair<long, double>> val_trace;
  double final_train_loss = 0.0;  // expectation estimate on fresh batches
  double final_val_loss = 0.0;
  double final_train_accuracy = -1.0;  // cross-entropy tasks only
  bool diverged = false;
  long steps_completed = 0;
};

struct EvalSummary {
  double loss = 0.0;
  double accuracy = -1.0;
};

// Loss (and argmax accuracy for cross-entropy) without touching gradients.
EvalSummary evaluate(const ArchSpec& spec, const ParamSet& params,
                     const models::SequenceBatch& batch, LossKind loss_kind);

// One-pass training: a fresh batch every iteration, AdamW with the cosine
// schedule, deterministic given cfg.seed. On divergence the last finite
// parameters are returned with `diverged` set.
TrainResult train(const TrainConfig& cfg, const BatchGenerator& train_gen,
                  const BatchGenerator& val_gen = nullptr, const TrainCallbacks& cb = {});

}  // namespace linattn::grad
