#include "linattn/grad/train.hpp"

#include <cmath>

namespace linattn::grad {

using models::SequenceBatch;

EvalSummary evaluate(const ArchSpec& spec, const ParamSet& params, const SequenceBatch& batch,
                     LossKind loss_kind) {
  Graph g;
  std::map<std::string, Value> handles;
  for (const auto& [name, tensor] : params) handles[name] = g.param(name, tensor);
  BuiltGraph built = build_loss(g, spec, handles, batch, loss_kind);
  EvalSummary out;
  out.loss = g.value(built.loss).data[0];
  if (loss_kind == LossKind::kXent) {
    const Tensor& pred = g.value(built.pred);
    const int rows = pred.rows(), c = pred.cols();
    long correct = 0, total = 0;
    for (int r = 0; r < rows; ++r) {
      if (batch.mask[r] == 0.0) continue;
      const double* z = pred.data.data() + static_cast<size_t>(r) * c;
      int arg = 0;
      for (int j = 1; j < c; ++j)
        if (z[j] > z[arg]) arg = j;
      correct += arg == batch.class_targets[r];
      ++total;
    }
    out.accuracy = total ? static_cast<double>(correct) / total : 0.0;
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, const BatchGenerator& train_gen,
                  const BatchGenerator& val_gen, const TrainCallbacks& cb) {
  num::Rng base(cfg.seed);
  num::Rng init_rng = base.split("init");

  TrainResult res;
  res.params = init_params(cfg.arch, init_rng);

  OptimHyper hyper = cfg.optim;
  if (hyper.total_steps == 0) hyper.total_steps = cfg.iterations;
  OptimState opt = OptimState::init(res.params, hyper, decay_exempt_params(cfg.arch));

  const long eval_every =
      cfg.eval_every > 0 ? cfg.eval_every : std::max<long>(1, cfg.iterations / 50);

  num::Rng data_base = base.split("data");
  num::Rng val_base = base.split("val");

  ParamSet last_good = res.params;
  for (long it = 0; it < cfg.iterations; ++it) {
    num::Rng data_rng = data_base.split(static_cast<uint64_t>(it));
    SequenceBatch batch = train_gen(data_rng);
    double loss = 0.0;
    bool bad = false;
    std::map<std::string, Tensor> grads;
    try {
      Graph g;
      std::map<std::string, Value> handles;
      for (const auto& [name, tensor] : res.params) handles[name] = g.param(name, tensor);
      BuiltGraph built = build_loss(g, cfg.arch, handles, batch, cfg.loss);
      loss = g.value(built.loss).data[0];
      if (!std::isfinite(loss)) bad = true;
      if (!bad) grads = g.backward(built.loss);
    } catch (const DivergenceError&) {
      bad = true;
    }
    if (bad) {
      res.params = last_good;
      res.diverged = true;
      res.steps_completed = it;
      return res;
    }
    last_good = res.params;
    adamw_step(res.params, grads, opt);
    res.steps_completed = it + 1;

    if ((it + 1) % eval_every == 0 || it + 1 == cfg.iterations) {
      res.train_trace.emplace_back(it + 1, loss);
      double vloss = std::nan("");
      if (val_gen) {
        num::Rng vrng = val_base.split(static_cast<uint64_t>(it));
        vloss = evaluate(cfg.arch, res.params, val_gen(vrng), cfg.loss).loss;
        res.val_trace.emplace_back(it + 1, vloss);
      }
      if (cb.on_eval) cb.on_eval(it + 1, loss, vloss);
    }
    if (cb.on_checkpoint && cb.checkpoint_every > 0 &&
        ((it + 1) % cb.checkpoint_every == 0 || it + 1 == cfg.iterations)) {
      cb.on_checkpoint(it + 1, res.params, loss);
    }
  }

  // Expectation estimates on fresh streams.
  num::Rng fe = base.split("final_eval");
  double tl = 0.0, acc = 0.0;
  for (int k = 0; k < cfg.final_eval_batches; ++k) {
    num::Rng r = fe.split(static_cast<uint64_t>(k));
    auto s = evaluate(cfg.arch, res.params, train_gen(r), cfg.loss);
    tl += s.loss;
    acc += s.accuracy;
  }
  res.final_train_loss = tl / cfg.final_eval_batches;
  if (cfg.loss == LossKind::kXent)
    res.final_train_accuracy = acc / cfg.final_eval_batches;
  if (val_gen) {
    num::Rng fv = base.split("final_val");
    double vl = 0.0;
    for (int k = 0; k < cfg.final_eval_batches; ++k) {
      num::Rng r = fv.split(static_cast<uint64_t>(k));
      vl += evaluate(cfg.arch, res.params, val_gen(r), cfg.loss).loss;
    }
    res.final_val_loss = vl / cfg.final_eval_batches;
  }
  return res;
}

}  // namespace linattn::grad
