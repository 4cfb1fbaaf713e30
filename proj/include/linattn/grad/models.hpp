#pragma once

#include <set>
#include <string>

#include "linattn/grad/graph.hpp"
#include "linattn/models/batch.hpp"
#include "linattn/models/params.hpp"
#include "linattn/num/rng.hpp"

namespace linattn::grad {

enum class LossKind { kMse, kXent };

// Architecture selector for trainable models. `hidden` is the recurrent
// state size (layer width for lstm/gru/lru); `gated` the number of gated
// output units of the in/out-gated RNNs.
struct ArchSpec {
  std::string arch = "gated_rnn";  // gated_rnn | dense_gated_rnn | side_gated_rnn |
                                   // lstm | gru | lru_out | lru_in_out | lru_in_out_mlp
  int d_in = 0;
  int d_out = 0;
  int hidden = 0;
  int gated = 0;   // defaults to hidden when 0
  int layers = 1;  // lstm/gru/lru stacks

  int gated_or_hidden() const { return gated > 0 ? gated : hidden; }
};

ParamSet init_params(const ArchSpec& spec, num::Rng& rng);

struct BuiltGraph {
  Value pred;  // (B*T, d_out)
  Value loss;  // scalar
};

BuiltGraph build_loss(Graph& g, const ArchSpec& spec,
                      const std::map<std::string, Value>& params,
                      const models::SequenceBatch& batch, LossKind loss_kind);

// Parameters that weight decay must not touch (the recurrence vectors).
std::set<std::string> decay_exempt_params(const ArchSpec& spec);

// Snapshot of the trained parameters as a runnable model.
models::ModelRef params_to_model(const ArchSpec& spec, const ParamSet& params);

}  // namespace linattn::grad
