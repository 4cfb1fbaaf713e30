#pragma once

#include <cstdint>
#include <vector>

#include "linattn/models/batch.hpp"
#include "linattn/models/params.hpp"
#include "linattn/num/rng.hpp"

namespace linattn::tasks {

// Emulate a fixed random linear self-attention layer on i.i.d. normal inputs.
struct TeacherStudentSpec {
  int d = 4;
  int seq_len = 32;
  double input_std = 1.0;
  double teacher_weight_std = 0.0;  // 0: default 1/sqrt(d)
  uint64_t teacher_seed = 0;

  double weight_std() const;
};

models::AttentionParams make_teacher(const TeacherStudentSpec& spec);
models::SequenceBatch gen_teacher_student(const TeacherStudentSpec& spec, num::Rng& rng,
                                          int batch);

// Sequences (x_t, W* x_t) for t <= T followed by the query token (x_{T+1}, 0).
// The loss mask selects only the query position; the target is W* x_{T+1}.
struct IclRegressionSpec {
  int d_x = 3;
  int d_y = 3;
  int t_context = 12;
  double w_star_var_train = 1.0 / 3.0;
  double w_star_var_validation = 2.0 / 3.0;
  double input_half_width = 1.7320508075688772;  // U(-sqrt(3), sqrt(3))

  int token_width() const { return d_x + d_y; }
  int seq_len() const { return t_context + 1; }
  double sigma_x_sq() const { return input_half_width * input_half_width / 3.0; }
};

enum class IclVariant { kTrain, kValidation };

models::SequenceBatch gen_icl_regression(const IclRegressionSpec& spec, num::Rng& rng,
                                         int batch, IclVariant variant,
                                         const std::vector<num::Matrix>* w_star_override = nullptr);

// Closed-form one-step-GD prediction per sequence: eta * sum_t y_t x_t^T x_query.
num::Matrix gd_baseline_predict(const IclRegressionSpec& spec,
                                const models::SequenceBatch& batch, double eta);

// eta* = 1 / (sigma_x^2 (T + d_x - 1/5)).
double optimal_eta(const IclRegressionSpec& spec);

// Monte-Carlo estimate of E[ 0.5 || y_query - yhat ||^2 ] over fresh tasks.
double gd_baseline_loss(const IclRegressionSpec& spec, double eta, int n_mc, num::Rng& rng);

// Loss on an eta grid computed from the same Monte-Carlo tasks; used to
// locate the empirical optimum.
std::vector<double> gd_baseline_loss_grid(const IclRegressionSpec& spec,
                                          const std::vector<double>& etas, int n_mc,
                                          num::Rng& rng);

// The attention layer implementing one GD step on in-context tokens:
// values read the y block scaled by eta, keys and queries read the x block.
models::AttentionParams gd_baseline_as_attention(const IclRegressionSpec& spec, double eta);

// One-hot pairs ([x_t, y_t])_{t<=T} then a query token; the target class is
// the y previously paired with the queried x. Token width 2T.
struct AssocRecallSpec {
  int t_pairs = 8;

  int vocab() const { return 2 * t_pairs; }
  int seq_len() const { return t_pairs + 1; }
};

models::SequenceBatch gen_assoc_recall(const AssocRecallSpec& spec, num::Rng& rng, int batch);

// key = query = x block, value = y block; solves the task exactly.
models::AttentionParams assoc_recall_analytic_lsa(const AssocRecallSpec& spec);

// Fraction of masked positions whose output argmax hits the class target.
double recall_accuracy(const models::Outputs& outputs, const models::SequenceBatch& batch);

}  // namespace linattn::tasks
