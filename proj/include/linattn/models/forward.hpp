#pragma once

#include "linattn/models/batch.hpp"
#include "linattn/models/params.hpp"

namespace linattn::models {

// Recurrent state magnitude above this aborts with a DivergenceError naming
// the timestep.
constexpr double kStateOverflow = 1e12;

// Streaming evaluation via the running key-value matrix; O(T d^2) time and
// O(d^2) state per sequence.
Outputs lsa_forward(const AttentionParams& p, const SequenceBatch& batch);

struct GatedRnnForwardResult {
  Outputs outputs;
  HiddenTrace hidden;
};

GatedRnnForwardResult gated_rnn_forward(const GatedRnnParams& p, const SequenceBatch& batch);

struct SideGatedForwardResult {
  Outputs outputs;
  HiddenTrace hidden;
};

SideGatedForwardResult side_gated_rnn_forward(const SideGatedRnnParams& p,
                                              const SequenceBatch& batch);

Outputs dense_gated_rnn_forward(const DenseGatedRnnParams& p, const SequenceBatch& batch);

Outputs lstm_forward(const LstmParams& p, const SequenceBatch& batch);

Outputs gru_forward(const GruParams& p, const SequenceBatch& batch);

Outputs lru_forward(const LruParams& p, const SequenceBatch& batch);

Outputs decayed_lsa_forward(const DecayedAttentionParams& p, const SequenceBatch& batch);

// Dispatch on the variant.
Outputs forward(const ModelRef& model, const SequenceBatch& batch);

}  // namespace linattn::models
