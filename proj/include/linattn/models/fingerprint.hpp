#pragma once

#include "linattn/models/params.hpp"
#include "linattn/poly/poly.hpp"

namespace linattn::models {

// Exact multivariate polynomial computed by the model's single-token map
// (empty state, one input). Defined for the bilinear-closed architectures:
// attention (degree 3), gated RNN (degree 4), side-gated RNN (degree 3).
// Throws for architectures with non-polynomial activations.
poly::PolyVector instantaneous_fingerprint(const ModelRef& model, int max_degree = 4);

poly::PolyVector attention_fingerprint(const AttentionParams& p);
poly::PolyVector gated_rnn_fingerprint(const GatedRnnParams& p);
poly::PolyVector side_gated_fingerprint(const SideGatedRnnParams& p);

}  // namespace linattn::models
