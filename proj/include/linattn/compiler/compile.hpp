#pragma once

#include <cstdint>
#include <string>

#include "linattn/models/params.hpp"

namespace linattn::compiler {

using models::AttentionParams;
using models::DecayedAttentionParams;
using models::GatedRnnParams;
using models::LstmParams;
using models::ModelRef;
using models::SideGatedRnnParams;

// Outcome of an executed equivalence check between two models. The deviation
// is always measured, never assumed.
struct ConstructionReport {
  std::string source_arch;
  std::string target_arch;
  int hidden_count = 0;
  int input_width = 0;  // width the target consumes (d+1 when augmented)
  double max_abs_deviation = 0.0;
  double max_rel_deviation = 0.0;
  uint64_t verification_seed = 0;
  int seq_len = 0;
  int n_seq = 0;

  std::string to_json() const;
};

// d^2+d hidden neurons; the result consumes inputs of width d+1 with a
// trailing constant-1 channel. Key-value neurons integrate (lambda = 1),
// query neurons forget (lambda = 0).
GatedRnnParams compile_full(const AttentionParams& p);

// Key matrix reparametrized to equal the value matrix, symmetric key-values
// packed as the upper triangle: d(d+1)/2 + d hidden neurons. Requires an
// invertible value matrix.
GatedRnnParams compile_compact(const AttentionParams& p);

// Rank-revealing construction: rank(W_k^T W_q) * (rank(W_v) + 1) hidden
// neurons. Singular values <= rank_tol * sigma_max are dropped.
GatedRnnParams compile_low_rank(const AttentionParams& p, double rank_tol = 1e-10);

// Side-gating construction: d^2 hidden neurons, no constant channel.
SideGatedRnnParams compile_side(const AttentionParams& p);

struct LstmCompileOptions {
  models::ActivationMode mode = models::ActivationMode::kLinearized;
  // Standard mode only: the gate operating scale. The compiled network
  // approximates the source with error O(epsilon).
  double epsilon = 1e-2;
};

// Single-layer LSTM matching a linear self-attention layer. Exact in
// linearized mode; in standard mode the soft gates run at a biased operating
// point and the readout inverts the local slope, leaving an O(epsilon) error.
LstmParams compile_lstm_attention(const AttentionParams& p, const LstmCompileOptions& opts = {});

// Two-layer linearized LSTM matching a gated RNN: layer 1 realizes the input
// gating and the recurrence (forget bias sigma^-1(lambda)), layer 2 the
// output gating.
LstmParams compile_lstm_gated_rnn(const GatedRnnParams& p);

// Attention layer with biases and per-row decay whose output obeys
// y_{t+1} = lambda . y_t + x_{t+1}.
DecayedAttentionParams compile_recurrence_to_decayed_lsa(const std::vector<double>& lambda);

// Runs both models on shared random sequences (width d, normal entries) and
// records the observed deviations. Models expecting width d+1 get the
// constant channel appended.
ConstructionReport verify_equivalence(const ModelRef& model_a, const ModelRef& model_b, int d,
                                      int seq_len, int n_seq, uint64_t seed);

}  // namespace linattn::compiler
