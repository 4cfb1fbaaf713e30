#pragma once

#include <vector>

#include "linattn/error.hpp"

namespace linattn::models {

// Batch of sequences with targets and a loss mask, shared across all tasks.
// inputs  [batch, seq_len, d_in]
// targets [batch, seq_len, d_out]
// mask    [batch, seq_len]  (0/1 weights; every sequence has >= 1 active)
struct SequenceBatch {
  int batch = 0;
  int seq_len = 0;
  int d_in = 0;
  int d_out = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<double> mask;
  // Optional per-position integer class targets (-1 where unused) for
  // classification tasks; targets then carries the one-hot encoding.
  std::vector<int> class_targets;

  SequenceBatch() = default;
  SequenceBatch(int b, int t, int din, int dout)
      : batch(b),
        seq_len(t),
        d_in(din),
        d_out(dout),
        inputs(static_cast<size_t>(b) * t * din, 0.0),
        targets(static_cast<size_t>(b) * t * dout, 0.0),
        mask(static_cast<size_t>(b) * t, 0.0) {}

  double* input_at(int b, int t) {
    return inputs.data() + (static_cast<size_t>(b) * seq_len + t) * d_in;
  }
  const double* input_at(int b, int t) const {
    return inputs.data() + (static_cast<size_t>(b) * seq_len + t) * d_in;
  }
  double* target_at(int b, int t) {
    return targets.data() + (static_cast<size_t>(b) * seq_len + t) * d_out;
  }
  const double* target_at(int b, int t) const {
    return targets.data() + (static_cast<size_t>(b) * seq_len + t) * d_out;
  }
  double mask_at(int b, int t) const {
    return mask[static_cast<size_t>(b) * seq_len + t];
  }

  // Same sequences with a trailing constant-1 input coordinate. Models never
  // augment implicitly; callers that need the constant channel do this.
  SequenceBatch with_constant_input() const;
};

// Model outputs, [batch, seq_len, d_out].
struct Outputs {
  int batch = 0;
  int seq_len = 0;
  int d_out = 0;
  std::vector<double> values;

  Outputs() = default;
  Outputs(int b, int t, int d)
      : batch(b), seq_len(t), d_out(d), values(static_cast<size_t>(b) * t * d, 0.0) {}

  double* at(int b, int t) {
    return values.data() + (static_cast<size_t>(b) * seq_len + t) * d_out;
  }
  const double* at(int b, int t) const {
    return values.data() + (static_cast<size_t>(b) * seq_len + t) * d_out;
  }

  double max_abs_diff(const Outputs& other) const;
};

// Hidden state trajectories, [batch, seq_len, n].
struct HiddenTrace {
  int batch = 0;
  int seq_len = 0;
  int n = 0;
  std::vector<double> values;

  HiddenTrace() = default;
  HiddenTrace(int b, int t, int n_) :
      batch(b), seq_len(t), n(n_), values(static_cast<size_t>(b) * t * n_, 0.0) {}

  double* at(int b, int t) {
    return values.data() + (static_cast<size_t>(b) * seq_len + t) * n;
  }
  const double* at(int b, int t) const {
    return values.data() + (static_cast<size_t>(b) * seq_len + t) * n;
  }
};

}  // namespace linattn::models
