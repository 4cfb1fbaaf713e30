#pragma once

#include <map>
#include <string>
#include <vector>

#include "linattn/grad/train.hpp"
#include "linattn/tasks/tasks.hpp"

namespace linattn::runner {

// One experiment = task + architecture + optimization schedule. Serializes
// to the external training-config JSON.
struct ExperimentConfig {
  std::string task = "teacher_student";  // teacher_student | icl_regression | assoc_recall
  grad::ArchSpec arch;
  long iterations = 1000;
  int batch = 64;
  int seq_len = 32;  // teacher-student sequence length; other tasks fix their own
  double lr0 = 1e-3;
  double lr_min = 1e-6;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  long checkpoint_every = 0;  // 0: only the final checkpoint
  long eval_every = 0;        // 0: iterations / 50
  // The in/out-gated RNNs see inputs with a trailing constant channel; the
  // side-gated RNN and the baseline architectures see raw tokens.
  bool augment_input = true;
  bool run_analysis = true;

  tasks::TeacherStudentSpec teacher_student;
  tasks::IclRegressionSpec icl;
  tasks::AssocRecallSpec recall;

  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  // Hash of the canonical config JSON plus the seed; names the run directory.
  std::string content_hash() const;

  int task_token_width() const;
  int task_d_out() const;
  int task_seq_len() const;
  grad::LossKind loss_kind() const;
};

struct RunRecord {
  ExperimentConfig config;
  std::string build_id;
  uint64_t seed = 0;
  std::string run_dir;
  std::string checkpoint_path;
  std::string analysis_path;
  std::vector<std::pair<long, double>> train_trace;
  std::vector<std::pair<long, double>> val_trace;
  bool diverged = false;
  long steps_completed = 0;
  double wall_seconds = 0.0;
  // final_train_loss, final_val_loss, plus task metrics (score_kv, score_q,
  // poly_distance, accuracy, delta_loss, ...)
  std::map<std::string, double> metrics;

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
};

// Trains, checkpoints, analyzes and persists under root_dir/<content hash>/.
RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& root_dir);

// Re-derives the batch generator of a config (shared with the CLI).
grad::BatchGenerator make_train_generator(const ExperimentConfig& cfg);
grad::BatchGenerator make_val_generator(const ExperimentConfig& cfg);

struct SweepSpec {
  std::string axis = "hidden";  // hidden | gated | arch | layers
  std::vector<std::string> values;
  int repeats = 1;
  ExperimentConfig base;

  std::string to_json() const;
  static SweepSpec from_json(const std::string& text);
};

struct SweepRow {
  std::string axis_value;
  uint64_t seed = 0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  double delta_loss = 0.0;  // vs the optimal one-step-GD loss (ICL task only)
  double runtime_s = 0.0;
};

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::string& root_dir);
// header: axis,seed,final_train_loss,final_val_loss,delta_loss,runtime_s
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

struct ConstructiveSweepRow {
  int hidden = 0;
  double deviation = 0.0;
  bool exact = false;  // deviation <= 1e-10
};

// No-training sweep: compiles the teacher into a budget of hidden neurons
// (compact construction, weakest key-value cells dropped when over budget)
// and measures the achieved deviation.
std::vector<ConstructiveSweepRow> constructive_transition_sweep(
    const models::AttentionParams& teacher, const std::vector<int>& hidden_counts,
    int seq_len, int n_seq, uint64_t seed);

// Markdown summary with the identification-metric and coefficient blocks.
// Throws on empty input.
std::string report(const std::vector<RunRecord>& records);

// Run-directory root: $LINATTN_RUN_ROOT or "runs".
std::string default_run_root();

}  // namespace linattn::runner
