// Command-line front end: compile attention layers into recurrent networks,
// verify equivalences, train models on the built-in tasks, analyze trained
// checkpoints, run sweeps and render reports.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "linattn/analysis/analysis.hpp"
#include "linattn/compiler/compile.hpp"
#include "linattn/models/checkpoint.hpp"
#include "linattn/models/forward.hpp"
#include "linattn/runner/runner.hpp"

using namespace linattn;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << text << "\n";
}

struct VerifyOpts {
  int seq_len = 32;
  int n_seq = 8;
  uint64_t seed = 1234;
};

// "T=32,nseq=8,seed=99"
VerifyOpts parse_verify(const std::string& text) {
  VerifyOpts v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw Error("bad --verify item '" + item + "'");
    std::string key = item.substr(0, eq);
    long val = std::stol(item.substr(eq + 1));
    if (key == "T")
      v.seq_len = static_cast<int>(val);
    else if (key == "nseq")
      v.n_seq = static_cast<int>(val);
    else if (key == "seed")
      v.seed = static_cast<uint64_t>(val);
    else
      throw Error("unknown --verify key '" + key + "'");
  }
  return v;
}

int cmd_compile(const std::string& from, const std::string& target, const std::string& out,
                const std::string& verify_spec, const std::string& mode_name, double epsilon,
                double rank_tol, const std::string& lambda_csv, double gate_tol) {
  models::ModelRef compiled;
  models::ModelRef source;
  int source_dim = 0;

  if (target == "decayed_lsa") {
    std::vector<double> lam;
    std::stringstream ss(lambda_csv);
    std::string item;
    while (std::getline(ss, item, ',')) lam.push_back(std::stod(item));
    if (lam.empty()) throw Error("compile: --lambda is required for decayed_lsa");
    compiled = compiler::compile_recurrence_to_decayed_lsa(lam);
    models::CheckpointMeta meta{0, ""};
    models::save_checkpoint(compiled, out, meta);
    std::cout << "wrote " << out << " (d=" << lam.size() << ")\n";
    return 0;
  }

  auto loaded = models::load_checkpoint(from);
  source = loaded.model;

  if (target == "lstm_gated_rnn") {
    const auto* g = std::get_if<models::GatedRnnParams>(&source);
    if (!g) throw Error("compile: lstm_gated_rnn expects a gated_rnn checkpoint");
    compiled = compiler::compile_lstm_gated_rnn(*g);
    source_dim = g->d_in();
  } else {
    const auto* att = std::get_if<models::AttentionParams>(&source);
    if (!att) throw Error("compile: target '" + target + "' expects an lsa checkpoint");
    source_dim = att->dim();
    if (target == "full")
      compiled = compiler::compile_full(*att);
    else if (target == "compact")
      compiled = compiler::compile_compact(*att);
    else if (target == "side")
      compiled = compiler::compile_side(*att);
    else if (target == "low_rank")
      compiled = compiler::compile_low_rank(*att, rank_tol);
    else if (target == "lstm_attention") {
      compiler::LstmCompileOptions opts;
      opts.mode = mode_name == "standard" ? models::ActivationMode::kStandard
                                          : models::ActivationMode::kLinearized;
      opts.epsilon = epsilon;
      compiled = compiler::compile_lstm_attention(*att, opts);
    } else {
      throw Error("compile: unknown target '" + target + "'");
    }
  }

  models::CheckpointMeta meta{0, ""};
  models::save_checkpoint(compiled, out, meta);
  std::cout << "wrote " << out << "\n";

  if (!verify_spec.empty()) {
    auto v = parse_verify(verify_spec);
    int d = target == "lstm_gated_rnn" ? source_dim : source_dim;
    auto rep = compiler::verify_equivalence(source, compiled, d, v.seq_len, v.n_seq, v.seed);
    write_file(out + ".report.json", rep.to_json());
    std::cout << rep.to_json() << "\n";
    if (rep.max_abs_deviation > gate_tol) {
      std::cerr << "verification failed: max deviation " << rep.max_abs_deviation << " > "
                << gate_tol << "\n";
      return 1;
    }
  }
  return 0;
}

int cmd_verify(const std::string& a, const std::string& b, int d, const VerifyOpts& v,
               double tol) {
  auto ma = models::load_checkpoint(a).model;
  auto mb = models::load_checkpoint(b).model;
  int dim = d > 0 ? d : std::min(models::model_d_in(ma), models::model_d_in(mb));
  auto rep = compiler::verify_equivalence(ma, mb, dim, v.seq_len, v.n_seq, v.seed);
  std::cout << rep.to_json() << "\n";
  return rep.max_abs_deviation <= tol ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& root, long seed_override) {
  auto cfg = runner::ExperimentConfig::from_json(read_file(config_path));
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  auto rec = runner::run_experiment(cfg, root);
  std::cout << "run dir: " << rec.run_dir << "\n";
  std::cout << "final train loss: " << rec.metrics.at("final_train_loss") << "\n";
  if (rec.metrics.count("accuracy"))
    std::cout << "accuracy: " << rec.metrics.at("accuracy") << "\n";
  if (rec.diverged) {
    std::cerr << "training diverged at step " << rec.steps_completed << "\n";
    return 1;
  }
  return 0;
}

int cmd_analyze(const std::string& ckpt, const std::string& teacher_path,
                const std::string& out, double lambda_tol, double weight_tol) {
  auto student_loaded = models::load_checkpoint(ckpt);
  const auto* student = std::get_if<models::GatedRnnParams>(&student_loaded.model);
  if (!student) throw Error("analyze: expects a gated_rnn checkpoint");
  auto teacher_loaded = models::load_checkpoint(teacher_path);
  const auto* teacher = std::get_if<models::AttentionParams>(&teacher_loaded.model);
  if (!teacher) throw Error("analyze: --teacher must be an lsa checkpoint");

  num::Rng rng(913);
  const int d = teacher->dim();
  models::SequenceBatch raw(16, 32, d, d);
  for (double& v : raw.inputs) v = rng.normal();
  for (double& v : raw.mask) v = 1.0;
  auto batch = student->d_in() == d + 1 ? raw.with_constant_input() : raw;

  auto fwd = models::gated_rnn_forward(*student, batch);
  auto probe = analysis::probe_kv_q(*student, fwd.hidden, *teacher, batch, lambda_tol);
  auto [pruned, prep] = analysis::prune(*student, weight_tol, batch);
  double dist = analysis::fingerprint_distance(models::ModelRef(*teacher),
                                               models::ModelRef(*student));
  auto merge = analysis::greedy_merge_scan(pruned, {}, batch);

  nlohmann::json j;
  j["probe"] = nlohmann::json::parse(probe.to_json());
  j["prune"] = nlohmann::json::parse(prep.to_json());
  j["poly_distance"] = dist;
  j["merge"] = {{"groups", merge.merged_groups}, {"deviation", merge.deviation}};
  auto classes = analysis::classify_lambda(*student, lambda_tol);
  nlohmann::json cj = nlohmann::json::array();
  for (auto c : classes) cj.push_back(analysis::lambda_class_name(c));
  j["lambda_classes"] = cj;
  write_file(out, j.dump(2));
  std::cout << "score_kv=" << probe.score_kv << " score_q=" << probe.score_q
            << " poly_distance=" << dist << "\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_sweep(const std::string& spec_path, const std::string& root, const std::string& out) {
  auto spec = runner::SweepSpec::from_json(read_file(spec_path));
  auto rows = runner::run_sweep(spec, root);
  runner::write_sweep_csv(rows, out);
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out) {
  std::vector<runner::RunRecord> records;
  for (const auto& dir : run_dirs)
    records.push_back(runner::RunRecord::from_json(read_file(dir + "/record.json")));
  auto md = runner::report(records);
  if (out.empty())
    std::cout << md;
  else {
    write_file(out, md);
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linear attention <-> gated RNN toolkit"};
  app.require_subcommand(1);

  // compile
  std::string from, target, out, verify_spec = "T=32,nseq=8,seed=1234",
              mode_name = "linearized", lambda_csv;
  double epsilon = 1e-2, rank_tol = 1e-10, gate_tol = 1e-9;
  auto* compile = app.add_subcommand("compile", "compile a checkpoint into another architecture");
  compile->add_option("--from", from, "source checkpoint (lsa or gated_rnn)");
  compile->add_option("--to", target,
                      "full | compact | side | low_rank | lstm_attention | lstm_gated_rnn | "
                      "decayed_lsa")
      ->required();
  compile->add_option("--out", out, "output checkpoint path")->required();
  compile->add_option("--verify", verify_spec,
                      "verification batch, e.g. T=32,nseq=8,seed=99 (empty string disables)");
  compile->add_option("--mode", mode_name, "lstm_attention: linearized | standard");
  compile->add_option("--epsilon", epsilon, "lstm_attention standard-mode scale");
  compile->add_option("--rank-tol", rank_tol, "low_rank singular value cutoff");
  compile->add_option("--lambda", lambda_csv, "decayed_lsa: comma-separated lambda");
  compile->add_option("--gate-tol", gate_tol, "verification failure threshold");

  // verify
  std::string ckpt_a, ckpt_b;
  int dim = 0, seq_len = 32, n_seq = 8;
  uint64_t vseed = 1234;
  double tol = 1e-9;
  auto* verify = app.add_subcommand("verify", "compare two checkpoints on random sequences");
  verify->add_option("--a", ckpt_a)->required();
  verify->add_option("--b", ckpt_b)->required();
  verify->add_option("--d", dim, "raw input width (default: inferred)");
  verify->add_option("--T", seq_len);
  verify->add_option("--nseq", n_seq);
  verify->add_option("--seed", vseed);
  verify->add_option("--tol", tol, "max-abs deviation gate");

  // train
  std::string config_path, root = runner::default_run_root();
  long seed_override = -1;
  auto* train = app.add_subcommand("train", "train a model from a config JSON");
  train->add_option("--config", config_path)->required();
  train->add_option("--out-root", root, "run directory root");
  train->add_option("--seed", seed_override, "overrides the config seed");

  // analyze
  std::string ana_ckpt, ana_teacher, ana_out = "report.json";
  double lambda_tol = 1e-3, weight_tol = 1e-4;
  auto* analyze = app.add_subcommand("analyze", "reverse-engineer a trained gated RNN");
  analyze->add_option("--ckpt", ana_ckpt)->required();
  analyze->add_option("--teacher", ana_teacher)->required();
  analyze->add_option("--out", ana_out);
  analyze->add_option("--lambda-tol", lambda_tol);
  analyze->add_option("--weight-tol", weight_tol);

  // sweep
  std::string sweep_spec, sweep_out = "sweep.csv";
  auto* sweep = app.add_subcommand("sweep", "train over an axis of configurations");
  sweep->add_option("--config", sweep_spec)->required();
  sweep->add_option("--out-root", root);
  sweep->add_option("--out", sweep_out);

  // report
  std::vector<std::string> run_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "summarize run records");
  report->add_option("--runs", run_dirs, "run directories")->required();
  report->add_option("--out", report_out, "output markdown path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (compile->parsed())
      return cmd_compile(from, target, out, verify_spec, mode_name, epsilon, rank_tol,
                         lambda_csv, gate_tol);
    if (verify->parsed())
      return cmd_verify(ckpt_a, ckpt_b, dim, VerifyOpts{seq_len, n_seq, vseed}, tol);
    if (train->parsed()) return cmd_train(config_path, root, seed_override);
    if (analyze->parsed())
      return cmd_analyze(ana_ckpt, ana_teacher, ana_out, lambda_tol, weight_tol);
    if (sweep->parsed()) return cmd_sweep(sweep_spec, root, sweep_out);
    if (report->parsed()) return cmd_report(run_dirs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
