#include "linattn/runner/runner.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "linattn/analysis/analysis.hpp"
#include "linattn/compiler/compile.hpp"
#include "linattn/models/checkpoint.hpp"
#include "linattn/models/forward.hpp"

namespace linattn::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kBuildId = "linattn 0.1.0";

std::string iso_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << text;
}

json arch_to_json(const grad::ArchSpec& a) {
  return json{{"arch", a.arch},   {"d_in", a.d_in},   {"d_out", a.d_out},
              {"hidden", a.hidden}, {"gated", a.gated}, {"layers", a.layers}};
}

grad::ArchSpec arch_from_json(const json& j) {
  grad::ArchSpec a;
  a.arch = j.value("arch", "gated_rnn");
  a.d_in = j.value("d_in", 0);
  a.d_out = j.value("d_out", 0);
  a.hidden = j.value("hidden", 0);
  a.gated = j.value("gated", 0);
  a.layers = j.value("layers", 1);
  return a;
}

}  // namespace

int ExperimentConfig::task_token_width() const {
  if (task == "teacher_student") return teacher_student.d;
  if (task == "icl_regression") return icl.token_width();
  if (task == "assoc_recall") return recall.vocab();
  throw Error("unknown task '" + task + "'");
}

int ExperimentConfig::task_d_out() const {
  if (task == "teacher_student") return teacher_student.d;
  if (task == "icl_regression") return icl.d_y;
  if (task == "assoc_recall") return recall.vocab();
  throw Error("unknown task '" + task + "'");
}

int ExperimentConfig::task_seq_len() const {
  if (task == "teacher_student") return seq_len;
  if (task == "icl_regression") return icl.seq_len();
  if (task == "assoc_recall") return recall.seq_len();
  throw Error("unknown task '" + task + "'");
}

grad::LossKind ExperimentConfig::loss_kind() const {
  return task == "assoc_recall" ? grad::LossKind::kXent : grad::LossKind::kMse;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["task"] = task;
  j["arch"] = arch_to_json(arch);
  j["iterations"] = iterations;
  j["batch"] = batch;
  j["seq_len"] = seq_len;
  j["lr0"] = lr0;
  j["lr_min"] = lr_min;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["eval_every"] = eval_every;
  j["augment_input"] = augment_input;
  j["run_analysis"] = run_analysis;
  j["teacher_student"] = {{"d", teacher_student.d},
                          {"seq_len", teacher_student.seq_len},
                          {"input_std", teacher_student.input_std},
                          {"teacher_weight_std", teacher_student.teacher_weight_std},
                          {"teacher_seed", teacher_student.teacher_seed}};
  j["icl"] = {{"d_x", icl.d_x},
              {"d_y", icl.d_y},
              {"t_context", icl.t_context},
              {"w_star_var_train", icl.w_star_var_train},
              {"w_star_var_validation", icl.w_star_var_validation},
              {"input_half_width", icl.input_half_width}};
  j["recall"] = {{"t_pairs", recall.t_pairs}};
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  c.task = j.value("task", "teacher_student");
  if (j.contains("arch")) c.arch = arch_from_json(j["arch"]);
  c.iterations = j.value("iterations", 1000L);
  c.batch = j.value("batch", 64);
  c.seq_len = j.value("seq_len", 32);
  c.lr0 = j.value("lr0", 1e-3);
  c.lr_min = j.value("lr_min", 1e-6);
  c.weight_decay = j.value("weight_decay", 1e-4);
  c.seed = j.value("seed", 0ull);
  c.checkpoint_every = j.value("checkpoint_every", 0L);
  c.eval_every = j.value("eval_every", 0L);
  c.augment_input = j.value("augment_input", true);
  c.run_analysis = j.value("run_analysis", true);
  if (j.contains("teacher_student")) {
    const auto& t = j["teacher_student"];
    c.teacher_student.d = t.value("d", 4);
    c.teacher_student.seq_len = t.value("seq_len", 32);
    c.teacher_student.input_std = t.value("input_std", 1.0);
    c.teacher_student.teacher_weight_std = t.value("teacher_weight_std", 0.0);
    c.teacher_student.teacher_seed = t.value("teacher_seed", 0ull);
  }
  if (j.contains("icl")) {
    const auto& t = j["icl"];
    c.icl.d_x = t.value("d_x", 3);
    c.icl.d_y = t.value("d_y", 3);
    c.icl.t_context = t.value("t_context", 12);
    c.icl.w_star_var_train = t.value("w_star_var_train", 1.0 / 3.0);
    c.icl.w_star_var_validation = t.value("w_star_var_validation", 2.0 / 3.0);
    c.icl.input_half_width = t.value("input_half_width", std::sqrt(3.0));
  }
  if (j.contains("recall")) c.recall.t_pairs = j["recall"].value("t_pairs", 8);
  return c;
}

std::string ExperimentConfig::content_hash() const {
  std::ostringstream os;
  os << std::hex << fnv1a(to_json());
  return os.str();
}

grad::BatchGenerator make_train_generator(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.teacher_student.seq_len = cfg.seq_len;
  return [c](num::Rng& rng) {
    models::SequenceBatch b;
    if (c.task == "teacher_student") {
      b = tasks::gen_teacher_student(c.teacher_student, rng, c.batch);
    } else if (c.task == "icl_regression") {
      b = tasks::gen_icl_regression(c.icl, rng, c.batch, tasks::IclVariant::kTrain);
    } else if (c.task == "assoc_recall") {
      b = tasks::gen_assoc_recall(c.recall, rng, c.batch);
    } else {
      throw Error("unknown task '" + c.task + "'");
    }
    return c.augment_input ? b.with_constant_input() : b;
  };
}

grad::BatchGenerator make_val_generator(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.teacher_student.seq_len = cfg.seq_len;
  return [c](num::Rng& rng) {
    models::SequenceBatch b;
    if (c.task == "teacher_student") {
      b = tasks::gen_teacher_student(c.teacher_student, rng, c.batch);
    } else if (c.task == "icl_regression") {
      b = tasks::gen_icl_regression(c.icl, rng, c.batch, tasks::IclVariant::kValidation);
    } else if (c.task == "assoc_recall") {
      b = tasks::gen_assoc_recall(c.recall, rng, c.batch);
    } else {
      throw Error("unknown task '" + c.task + "'");
    }
    return c.augment_input ? b.with_constant_input() : b;
  };
}

namespace {

grad::ArchSpec resolve_arch(const ExperimentConfig& cfg) {
  grad::ArchSpec a = cfg.arch;
  int width = cfg.task_token_width() + (cfg.augment_input ? 1 : 0);
  if (a.d_in == 0) a.d_in = width;
  if (a.d_out == 0) a.d_out = cfg.task_d_out();
  if (a.d_in != width)
    throw ShapeError("run_experiment: arch.d_in disagrees with the task token width");
  return a;
}

void run_task_analysis(const ExperimentConfig& cfg, const grad::ArchSpec& arch,
                       const grad::TrainResult& result, RunRecord& record) {
  json report;
  auto model = grad::params_to_model(arch, result.params);
  if (cfg.task == "teacher_student" && arch.arch == "gated_rnn") {
    auto teacher = tasks::make_teacher(cfg.teacher_student);
    num::Rng arng = num::Rng(cfg.seed).split("analysis");
    auto raw = tasks::gen_teacher_student(cfg.teacher_student, arng, 16);
    auto batch = cfg.augment_input ? raw.with_constant_input() : raw;
    const auto& student = std::get<models::GatedRnnParams>(model);
    auto fwd = models::gated_rnn_forward(student, batch);
    auto probe = analysis::probe_kv_q(student, fwd.hidden, teacher, batch, 1e-2);
    record.metrics["score_kv"] = probe.score_kv;
    record.metrics["score_q"] = probe.score_q;
    double dist = analysis::fingerprint_distance(models::ModelRef(teacher), model);
    record.metrics["poly_distance"] = dist;
    auto [pruned, prep] = analysis::prune(student, 1e-4, batch);
    record.metrics["pruned_hidden"] = static_cast<double>(prep.removed_hidden.size());
    record.metrics["pruned_gated"] = static_cast<double>(prep.removed_gated.size());
    record.metrics["prune_deviation"] = prep.deviation;
    report["probe"] = json::parse(probe.to_json());
    report["prune"] = json::parse(prep.to_json());
    report["poly_distance"] = dist;
  } else if (cfg.task == "icl_regression" &&
             (arch.arch == "gated_rnn" || arch.arch == "dense_gated_rnn")) {
    double eta_star = tasks::optimal_eta(cfg.icl);
    num::Rng grng = num::Rng(cfg.seed).split("gd_baseline");
    double gd_loss = tasks::gd_baseline_loss(cfg.icl, eta_star, 20000, grng);
    record.metrics["gd_loss_opt"] = gd_loss;
    record.metrics["delta_loss"] = result.final_train_loss - gd_loss;
    if (arch.arch == "gated_rnn") {
      auto terms = analysis::icl_polynomial_terms(model, cfg.icl.d_x, cfg.icl.d_y);
      double mean_coef = 0.0, max_resid = 0.0;
      int count = 0;
      for (int c = 0; c < cfg.icl.d_y; ++c) {
        for (double v : terms.coefficients[c]) {
          mean_coef += v;
          ++count;
        }
        max_resid = std::max(max_resid, terms.residual[c]);
      }
      record.metrics["icl_coef_mean"] = mean_coef / std::max(1, count);
      record.metrics["icl_coef_target"] = eta_star;
      record.metrics["icl_residual_max"] = max_resid;
      report["icl_terms"] = json::parse(terms.to_json());
    }
  } else if (cfg.task == "assoc_recall" && arch.arch == "side_gated_rnn") {
    auto probe = analysis::recall_bilinear_probe(model, cfg.recall.t_pairs);
    record.metrics["recall_max_rank_ratio"] = probe.max_rank_ratio;
    report["recall_probe"] = json::parse(probe.to_json());
  }
  if (!report.empty()) {
    record.analysis_path = record.run_dir + "/analysis.json";
    write_file(record.analysis_path, report.dump(2));
  }
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& root_dir) {
  auto t0 = std::chrono::steady_clock::now();
  grad::ArchSpec arch = resolve_arch(cfg);

  RunRecord record;
  record.config = cfg;
  record.config.arch = arch;
  record.build_id = kBuildId;
  record.seed = cfg.seed;
  record.run_dir = root_dir + "/" + record.config.content_hash();
  fs::create_directories(record.run_dir);
  write_file(record.run_dir + "/config.json", record.config.to_json());

  grad::TrainConfig tc;
  tc.arch = arch;
  tc.loss = cfg.loss_kind();
  tc.iterations = cfg.iterations;
  tc.batch = cfg.batch;
  tc.seq_len = cfg.task_seq_len();
  tc.optim.lr0 = cfg.lr0;
  tc.optim.lr_min = cfg.lr_min;
  tc.optim.weight_decay = cfg.weight_decay;
  tc.optim.total_steps = cfg.iterations;
  tc.seed = cfg.seed;
  tc.eval_every = static_cast<int>(cfg.eval_every);

  grad::TrainCallbacks cb;
  if (cfg.checkpoint_every > 0) {
    fs::create_directories(record.run_dir + "/checkpoints");
    cb.checkpoint_every = static_cast<int>(cfg.checkpoint_every);
    cb.on_checkpoint = [&](long step, const grad::ParamSet& params, double) {
      models::CheckpointMeta meta{cfg.seed, iso_now()};
      models::save_checkpoint(grad::params_to_model(arch, params),
                              record.run_dir + "/checkpoints/step_" + std::to_string(step) +
                                  ".json",
                              meta);
    };
  }

  auto result = grad::train(tc, make_train_generator(cfg), make_val_generator(cfg), cb);

  record.train_trace = result.train_trace;
  record.val_trace = result.val_trace;
  record.diverged = result.diverged;
  record.steps_completed = result.steps_completed;
  record.metrics["final_train_loss"] = result.final_train_loss;
  record.metrics["final_val_loss"] = result.final_val_loss;
  if (result.final_train_accuracy >= 0.0)
    record.metrics["accuracy"] = result.final_train_accuracy;

  models::CheckpointMeta meta{cfg.seed, iso_now()};
  record.checkpoint_path = record.run_dir + "/checkpoint_final.json";
  models::save_checkpoint(grad::params_to_model(arch, result.params), record.checkpoint_path,
                          meta);

  {
    std::ostringstream csv;
    csv << "step,train_loss,val_loss\n";
    size_t vi = 0;
    for (const auto& [step, loss] : record.train_trace) {
      csv << step << "," << loss << ",";
      if (vi < record.val_trace.size() && record.val_trace[vi].first == step) {
        csv << record.val_trace[vi].second;
        ++vi;
      }
      csv << "\n";
    }
    write_file(record.run_dir + "/metrics.csv", csv.str());
  }

  if (cfg.run_analysis && !result.diverged) run_task_analysis(cfg, arch, result, record);

  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(record.run_dir + "/record.json", record.to_json());
  return record;
}

std::string RunRecord::to_json() const {
  json j;
  j["config"] = json::parse(config.to_json());
  j["build_id"] = build_id;
  j["seed"] = seed;
  j["run_dir"] = run_dir;
  j["checkpoint_path"] = checkpoint_path;
  j["analysis_path"] = analysis_path;
  j["diverged"] = diverged;
  j["steps_completed"] = steps_completed;
  j["wall_seconds"] = wall_seconds;
  j["metrics"] = metrics;
  j["train_trace"] = train_trace;
  j["val_trace"] = val_trace;
  return j.dump(2);
}

RunRecord RunRecord::from_json(const std::string& text) {
  json j = json::parse(text);
  RunRecord r;
  r.config = ExperimentConfig::from_json(j.at("config").dump());
  r.build_id = j.value("build_id", "");
  r.seed = j.value("seed", 0ull);
  r.run_dir = j.value("run_dir", "");
  r.checkpoint_path = j.value("checkpoint_path", "");
  r.analysis_path = j.value("analysis_path", "");
  r.diverged = j.value("diverged", false);
  r.steps_completed = j.value("steps_completed", 0L);
  r.wall_seconds = j.value("wall_seconds", 0.0);
  if (j.contains("metrics"))
    r.metrics = j["metrics"].get<std::map<std::string, double>>();
  if (j.contains("train_trace"))
    r.train_trace = j["train_trace"].get<std::vector<std::pair<long, double>>>();
  if (j.contains("val_trace"))
    r.val_trace = j["val_trace"].get<std::vector<std::pair<long, double>>>();
  return r;
}

std::string SweepSpec::to_json() const {
  json j;
  j["axis"] = axis;
  j["values"] = values;
  j["repeats"] = repeats;
  j["base"] = json::parse(base.to_json());
  return j.dump(2);
}

SweepSpec SweepSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  SweepSpec s;
  s.axis = j.value("axis", "hidden");
  s.values = j.at("values").get<std::vector<std::string>>();
  s.repeats = j.value("repeats", 1);
  s.base = ExperimentConfig::from_json(j.at("base").dump());
  if (s.values.empty()) throw Error("SweepSpec: axis values must be non-empty");
  if (s.repeats < 1) throw Error("SweepSpec: repeats must be >= 1");
  return s;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::string& root_dir) {
  if (spec.values.empty()) throw Error("run_sweep: empty axis");
  double gd_loss_opt = 0.0;
  if (spec.base.task == "icl_regression") {
    num::Rng rng = num::Rng(spec.base.seed).split("sweep_gd_baseline");
    gd_loss_opt =
        tasks::gd_baseline_loss(spec.base.icl, tasks::optimal_eta(spec.base.icl), 50000, rng);
  }
  std::vector<SweepRow> rows;
  for (size_t vi = 0; vi < spec.values.size(); ++vi) {
    for (int r = 0; r < spec.repeats; ++r) {
      ExperimentConfig cfg = spec.base;
      const std::string& v = spec.values[vi];
      if (spec.axis == "hidden")
        cfg.arch.hidden = std::stoi(v);
      else if (spec.axis == "gated")
        cfg.arch.gated = std::stoi(v);
      else if (spec.axis == "arch")
        cfg.arch.arch = v;
      else if (spec.axis == "layers")
        cfg.arch.layers = std::stoi(v);
      else
        throw Error("run_sweep: unknown axis '" + spec.axis + "'");
      cfg.seed = num::Rng(spec.base.seed).split("sweep").split(vi * 1000 + r).seed();
      cfg.run_analysis = false;
      auto record = run_experiment(cfg, root_dir);
      SweepRow row;
      row.axis_value = v;
      row.seed = cfg.seed;
      row.final_train_loss = record.metrics.at("final_train_loss");
      row.final_val_loss = record.metrics.at("final_val_loss");
      row.delta_loss = spec.base.task == "icl_regression"
                           ? row.final_train_loss - gd_loss_opt
                           : 0.0;
      row.runtime_s = record.wall_seconds;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ostringstream csv;
  csv << "axis,seed,final_train_loss,final_val_loss,delta_loss,runtime_s\n";
  for (const auto& r : rows)
    csv << r.axis_value << "," << r.seed << "," << r.final_train_loss << ","
        << r.final_val_loss << "," << r.delta_loss << "," << r.runtime_s << "\n";
  write_file(path, csv.str());
}

std::vector<ConstructiveSweepRow> constructive_transition_sweep(
    const models::AttentionParams& teacher, const std::vector<int>& hidden_counts,
    int seq_len, int n_seq, uint64_t seed) {
  teacher.check();
  const int d = teacher.dim();
  auto compact = compiler::compile_compact(teacher);
  const int n_kv = d * (d + 1) / 2;
  const int n_full = compact.hidden();

  // key-value cells ranked by how strongly they feed the gated outputs
  std::vector<std::pair<double, int>> importance;
  for (int s = 0; s < n_kv; ++s) {
    double wm = 0.0, wx = 0.0;
    for (int j = 0; j < compact.w_m_in.cols; ++j) {
      wm += compact.w_m_in(s, j) * compact.w_m_in(s, j);
      wx += compact.w_x_in(s, j) * compact.w_x_in(s, j);
    }
    importance.emplace_back(std::sqrt(wm * wx), s);
  }
  std::stable_sort(importance.begin(), importance.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<ConstructiveSweepRow> rows;
  for (int n : hidden_counts) {
    ConstructiveSweepRow row;
    row.hidden = n;
    models::GatedRnnParams net = compact;
    if (n < n_full) {
      // over budget: silence the weakest key-value cells (queries survive
      // while the budget allows)
      int keep_kv = std::max(0, n - d);
      for (int rank = keep_kv; rank < n_kv; ++rank) {
        int s = importance[rank].second;
        for (int j = 0; j < net.w_m_in.cols; ++j) {
          net.w_m_in(s, j) = 0.0;
          net.w_x_in(s, j) = 0.0;
        }
      }
    }
    auto rep = compiler::verify_equivalence(models::ModelRef(teacher),
                                            models::ModelRef(net), d, seq_len, n_seq, seed);
    row.deviation = rep.max_abs_deviation;
    row.exact = row.deviation <= 1e-10;
    rows.push_back(row);
  }
  return rows;
}

std::string report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw Error("report: no run records");
  std::ostringstream md;
  md << "# Run summary\n\n";
  md << "| run | task | arch | train loss | val loss | wall s |\n";
  md << "|---|---|---|---|---|---|\n";
  auto metric = [](const RunRecord& r, const std::string& k) {
    auto it = r.metrics.find(k);
    return it == r.metrics.end() ? std::nan("") : it->second;
  };
  for (const auto& r : records) {
    md << "| " << r.config.content_hash() << " | " << r.config.task << " | "
       << r.config.arch.arch << " | " << metric(r, "final_train_loss") << " | "
       << metric(r, "final_val_loss") << " | " << r.wall_seconds << " |\n";
  }

  bool any_ident = false;
  for (const auto& r : records)
    if (r.metrics.count("score_kv")) any_ident = true;
  if (any_ident) {
    md << "\n## Identification metrics\n\n";
    md << "| run | loss | score KV | score Q | polynomial distance |\n";
    md << "|---|---|---|---|---|\n";
    for (const auto& r : records) {
      if (!r.metrics.count("score_kv")) continue;
      md << "| " << r.config.content_hash() << " | " << metric(r, "final_train_loss")
         << " | " << metric(r, "score_kv") << " | " << metric(r, "score_q") << " | "
         << metric(r, "poly_distance") << " |\n";
    }
  }

  bool any_icl = false;
  for (const auto& r : records)
    if (r.metrics.count("icl_coef_mean")) any_icl = true;
  if (any_icl) {
    md << "\n## In-context regression coefficients\n\n";
    md << "| run | mean coefficient | optimal step size | residual | delta loss |\n";
    md << "|---|---|---|---|---|\n";
    for (const auto& r : records) {
      if (!r.metrics.count("icl_coef_mean")) continue;
      md << "| " << r.config.content_hash() << " | " << metric(r, "icl_coef_mean") << " | "
         << metric(r, "icl_coef_target") << " | " << metric(r, "icl_residual_max") << " | "
         << metric(r, "delta_loss") << " |\n";
    }
  }
  return md.str();
}

std::string default_run_root() {
  const char* env = std::getenv("LINATTN_RUN_ROOT");
  return env && *env ? env : "runs";
}

}  // namespace linattn::runner
