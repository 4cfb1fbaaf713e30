#pragma once

#include <string>
#include <vector>

#include "linattn/models/batch.hpp"
#include "linattn/models/params.hpp"
#include "linattn/num/linalg.hpp"

namespace linattn::analysis {

enum class LambdaClass { kIntegrator, kMemoryless, kOther };

const char* lambda_class_name(LambdaClass c);

// lambda >= 1-tol: integrator; lambda <= tol: memoryless; otherwise other.
std::vector<LambdaClass> classify_lambda(const std::vector<double>& lambda, double tol = 1e-3);
std::vector<LambdaClass> classify_lambda(const models::GatedRnnParams& p, double tol = 1e-3);

struct PruneReport {
  std::vector<int> kept_hidden, removed_hidden;
  std::vector<int> kept_gated, removed_gated;
  std::vector<LambdaClass> kept_lambda_class;
  double weight_tol_used = 0.0;
  // max |output difference| between the original and pruned network on the
  // verification batch, always measured by execution.
  double deviation = 0.0;

  std::string to_json() const;
};

// Drops hidden neurons whose input gating rows (either branch) or output
// gating columns (both branches) vanish below weight_tol relative to the
// layer's max-abs weight, and gated units with vanishing readout columns or
// gating rows.
std::pair<models::GatedRnnParams, PruneReport> prune(const models::GatedRnnParams& p,
                                                     double weight_tol,
                                                     const models::SequenceBatch& verify_batch);

struct ProbeReport {
  double score_kv = 1.0;  // mean over targets of 1 - R^2
  double score_q = 1.0;
  int n_integrator = 0;
  int n_memoryless = 0;
  num::Matrix kv_probe;  // (|integrators|+1) x d^2, last row is the bias
  num::Matrix q_probe;   // (|memoryless|+1) x d

  std::string to_json() const;
};

// Linear regressions (with bias) predicting the teacher's cumulative
// key-values from integrator states and its instantaneous queries from
// memoryless states. The key-value targets use the same timing convention
// as the forward pass (state after absorbing x_t).
ProbeReport probe_kv_q(const models::GatedRnnParams& p, const models::HiddenTrace& hidden,
                       const models::AttentionParams& teacher,
                       const models::SequenceBatch& batch, double lambda_tol = 1e-3);

// Normalized distance between instantaneous-map coefficient vectors. When
// exactly one side consumes the constant-augmented input (one extra
// variable), that variable is fixed to 1 before comparing.
double fingerprint_distance(const models::ModelRef& a, const models::ModelRef& b,
                            int max_degree = 4);

struct MergeReport {
  bool merged = false;
  std::string reason;          // set when refused
  double max_rank_ratio = 0.0; // worst sigma2/sigma1 over the output kernels
  double min_cosine = 1.0;     // worst pairwise kernel alignment
  double deviation = 0.0;      // measured on the verification batch

  std::string to_json() const;
};

struct MergeOptions {
  double rank_tol = 1e-3;          // sigma2/sigma1 bound
  double cosine_tol = 1.0 - 1e-6;  // normalized kernel alignment bound
};

// Combines the candidate gated-output rows into a single row when, for every
// network output, their readout-weighted kernel sum is rank-1 and all kernels
// are mutually proportional. Refuses (and returns the input unchanged)
// otherwise.
std::pair<models::GatedRnnParams, MergeReport> merge_rank1_rows(
    const models::GatedRnnParams& p, const std::vector<int>& candidate_rows,
    const MergeOptions& opts, const models::SequenceBatch& verify_batch);

struct GreedyMergeResult {
  models::GatedRnnParams params;
  std::vector<std::vector<int>> merged_groups;  // original row indices
  double deviation = 0.0;  // vs the input network, on the verification batch
};

// Groups gated-output rows whose rank-1 kernels are mutually proportional
// and merges each group. Conservative: a group is kept only if the merge
// passes the rank/proportionality gates.
GreedyMergeResult greedy_merge_scan(const models::GatedRnnParams& p, const MergeOptions& opts,
                                    const models::SequenceBatch& verify_batch);

struct IclTermsReport {
  int d_x = 0, d_y = 0;
  // coefficients[c][j]: coefficient of x_j^2 * y_c in the unit predicting y_c
  std::vector<std::vector<double>> coefficients;
  std::vector<double> residual;  // norm of all remaining coefficients, per unit

  std::string to_json() const;
};

// Fingerprint-based extraction of the one-step-GD signature terms.
IclTermsReport icl_polynomial_terms(const models::ModelRef& model, int d_x, int d_y);

struct RecallProbeReport {
  int t_pairs = 0;
  // per (x_i, y_j) basis pair, row-major over (i, j)
  std::vector<double> rank_ratio;       // sigma2 / sigma1
  std::vector<int> peak_row, peak_col;  // strongest entry of each map
  double max_rank_ratio = 0.0;

  std::string to_json() const;
};

// Evaluates the bilinear map M(x, y) on canonical one-hot pairs for a
// side-gated RNN (or the analytic attention solution) trained on the recall
// task and reports each map's numerical rank structure.
RecallProbeReport recall_bilinear_probe(const models::ModelRef& model, int t_pairs);

}  // namespace linattn::analysis
