// Acceptance suite: runs every top-level criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exits 0 only if all pass.
//
// The desk-scale training criteria (9, 10, 13) are stochastic; they train
// multiple seeds and gate on the stated majority.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "linattn/analysis/analysis.hpp"
#include "linattn/compiler/compile.hpp"
#include "linattn/grad/train.hpp"
#include "linattn/models/checkpoint.hpp"
#include "linattn/models/fingerprint.hpp"
#include "linattn/models/forward.hpp"
#include "linattn/num/linalg.hpp"
#include "linattn/runner/runner.hpp"
#include "linattn/tasks/tasks.hpp"

using namespace linattn;
using num::Matrix;
using num::Rng;

namespace {

struct Harness {
  int failures = 0;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void report(int criterion, bool pass, const std::string& detail) {
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    t0 = std::chrono::steady_clock::now();
    std::printf("C%-2d %s  (%.1fs)  %s\n", criterion, pass ? "PASS" : "FAIL", secs,
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
};

models::AttentionParams random_teacher(Rng& rng, int d) {
  models::AttentionParams p;
  double std = 1.0 / std::sqrt(static_cast<double>(d));
  p.w_v = num::sample_normal(rng, d, d, std);
  p.w_k = num::sample_normal(rng, d, d, std);
  p.w_q = num::sample_normal(rng, d, d, std);
  return p;
}

double max_deviation(const models::ModelRef& a, const models::ModelRef& b, int d, int T,
                     int n_seq, uint64_t seed) {
  return compiler::verify_equivalence(a, b, d, T, n_seq, seed).max_abs_deviation;
}

double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  double n = xs.size(), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double lx = std::log10(xs[i]), ly = std::log10(ys[i]);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// criterion 1: construction equivalence across d and T
void criterion_1(Harness& h) {
  double worst_tight = 0.0, worst_loose = 0.0;
  bool pass = true;
  for (int d = 1; d <= 8; ++d) {
    Rng rng(5000 + d);
    auto teacher = random_teacher(rng, d);
    for (int T : {1, 2, 32}) {
      uint64_t seed = 9100 + d * 10 + T;
      double dev_full =
          max_deviation(teacher, compiler::compile_full(teacher), d, T, 8, seed);
      double dev_side =
          max_deviation(teacher, compiler::compile_side(teacher), d, T, 8, seed + 1);
      double dev_compact =
          max_deviation(teacher, compiler::compile_compact(teacher), d, T, 8, seed + 2);
      double dev_lowrank =
          max_deviation(teacher, compiler::compile_low_rank(teacher), d, T, 8, seed + 3);
      worst_tight = std::max({worst_tight, dev_full, dev_side});
      worst_loose = std::max({worst_loose, dev_compact, dev_lowrank});
      pass = pass && dev_full <= 1e-10 && dev_side <= 1e-10 && dev_compact <= 1e-9 &&
             dev_lowrank <= 1e-9;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "full/side max dev %.2e (<=1e-10), compact/low-rank %.2e (<=1e-9)",
                worst_tight, worst_loose);
  h.report(1, pass, buf);
}

// criterion 2: neuron-count identities
void criterion_2(Harness& h) {
  Rng rng(5102);
  bool pass = true;
  std::string detail;
  for (int d : {1, 3, 4, 8}) {
    auto t = random_teacher(rng, d);
    pass = pass && compiler::compile_full(t).hidden() == d * d + d;
  }
  auto t4 = random_teacher(rng, 4);
  for (int i = 0; i < 4; ++i) t4.w_v(i, i) += 1.5;
  int compact4 = compiler::compile_compact(t4).hidden();
  pass = pass && compact4 == 14;

  // d=12 with both ranks forced to 6
  auto t12 = random_teacher(rng, 12);
  auto truncate = [](const Matrix& m, int rank) {
    auto s = num::svd(m);
    Matrix us = s.u;
    for (int i = 0; i < us.rows; ++i)
      for (int j = 0; j < us.cols; ++j) us(i, j) *= (j < rank ? s.s[j] : 0.0);
    return num::matmul(us, s.v.transposed());
  };
  t12.w_v = truncate(t12.w_v, 6);
  t12.w_k = truncate(t12.w_k, 6);
  t12.w_q = truncate(t12.w_q, 6);
  int lowrank12 = compiler::compile_low_rank(t12).hidden();
  pass = pass && lowrank12 == 42;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "full d^2+d ok, compact(4)=%d (=14), lowrank(12,r6)=%d (=42)",
                compact4, lowrank12);
  h.report(2, pass, buf);
}

// criterion 3: LSTM constructions
void criterion_3(Harness& h) {
  Rng rng(5103);
  bool pass = true;
  double worst = 0.0;
  for (int d : {2, 3}) {
    auto t = random_teacher(rng, d);
    double dev = max_deviation(t, compiler::compile_lstm_attention(t), d, 16, 4, 9300 + d);
    worst = std::max(worst, dev);
    pass = pass && dev <= 1e-10;
  }
  {
    // gated RNN -> two-layer LSTM, trained-style and compiled-style lambdas
    Rng prng(5104);
    models::GatedRnnParams g;
    g.w_m_in = num::sample_normal(prng, 6, 4, 0.5);
    g.w_x_in = num::sample_normal(prng, 6, 4, 0.5);
    g.lambda_raw = {-1.0, -0.5, 0.0, 0.5, 1.0, -2.0};
    g.lambda_mode = models::LambdaMode::kExp;
    g.w_m_out = num::sample_normal(prng, 5, 6, 0.5);
    g.w_x_out = num::sample_normal(prng, 5, 6, 0.5);
    g.d_readout = num::sample_normal(prng, 3, 5, 0.5);
    auto lstm = compiler::compile_lstm_gated_rnn(g);
    models::SequenceBatch batch(4, 16, 4, 3);
    Rng brng(5105);
    for (double& v : batch.inputs) v = brng.normal();
    for (double& v : batch.mask) v = 1.0;
    double dev = models::gated_rnn_forward(g, batch)
                     .outputs.max_abs_diff(models::lstm_forward(lstm, batch));
    worst = std::max(worst, dev);
    pass = pass && dev <= 1e-10;
  }
  // standard-mode epsilon sweep
  auto t = random_teacher(rng, 2);
  std::vector<double> epses = {1e-1, 1e-2, 1e-3, 1e-4}, errs;
  for (double eps : epses) {
    compiler::LstmCompileOptions opts;
    opts.mode = models::ActivationMode::kStandard;
    opts.epsilon = eps;
    errs.push_back(max_deviation(t, compiler::compile_lstm_attention(t, opts), 2, 4, 4, 9301));
  }
  double slope = loglog_slope(epses, errs);
  pass = pass && std::abs(slope - 1.0) <= 0.15;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "linearized max dev %.2e (<=1e-10), eps-sweep slope %.3f (1.0+-0.15)",
                worst, slope);
  h.report(3, pass, buf);
}

// criterion 4: decayed-attention recurrence
void criterion_4(Harness& h) {
  bool pass = true;
  double worst = 0.0;
  for (int d = 1; d <= 8; ++d) {
    Rng rng(5200 + d);
    std::vector<double> lam(d);
    for (double& l : lam) l = rng.next_unit();
    auto p = compiler::compile_recurrence_to_decayed_lsa(lam);
    models::SequenceBatch batch(4, 20, d, d);
    for (double& v : batch.inputs) v = rng.normal();
    auto out = models::decayed_lsa_forward(p, batch);
    for (int b = 0; b < 4; ++b) {
      std::vector<double> y(d, 0.0);
      for (int t = 0; t < 20; ++t) {
        for (int i = 0; i < d; ++i) y[i] = lam[i] * y[i] + batch.input_at(b, t)[i];
        for (int i = 0; i < d; ++i) worst = std::max(worst, std::abs(out.at(b, t)[i] - y[i]));
      }
    }
  }
  pass = worst <= 1e-12;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "max dev vs direct recurrence %.2e (<=1e-12)", worst);
  h.report(4, pass, buf);
}

// criterion 5: optimal learning rate
void criterion_5(Harness& h) {
  tasks::IclRegressionSpec spec;
  double eta = tasks::optimal_eta(spec);
  bool pass = std::abs(eta - 1.0 / 14.8) <= 1e-12;
  // three significant digits of the tabulated value
  pass = pass && std::abs(eta - 6.76e-2) < 5e-5;
  Rng rng(5300);
  std::vector<double> grid;
  for (double e = 0.050; e <= 0.0851; e += 1e-3) grid.push_back(e);
  auto losses = tasks::gd_baseline_loss_grid(spec, grid, 100000, rng);
  size_t best = 0;
  for (size_t i = 1; i < losses.size(); ++i)
    if (losses[i] < losses[best]) best = i;
  double gap = std::abs(grid[best] - eta);
  pass = pass && gap <= 1e-3 + 1e-12;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "eta*=%.9f (=1/14.8), MC argmin at %.3f (gap %.1e <= 1e-3)",
                eta, grid[best], gap);
  h.report(5, pass, buf);
}

// criterion 6: optimal-GD loss
void criterion_6(Harness& h) {
  tasks::IclRegressionSpec spec;
  Rng rng(5301);
  double at_zero = tasks::gd_baseline_loss(spec, 0.0, 100000, rng);
  Rng rng2(5302);
  double at_opt = tasks::gd_baseline_loss(spec, tasks::optimal_eta(spec), 100000, rng2);
  // the tabulated optimum is reported per output component
  double per_component = at_opt / spec.d_y;
  bool pass = std::abs(at_zero - 1.5) <= 0.01 && std::abs(per_component - 0.0947) <= 0.003;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "loss(0)=%.4f (1.5+-0.01), loss(eta*)/d_y=%.4f (0.0947+-0.003)", at_zero,
                per_component);
  h.report(6, pass, buf);
}

// criterion 7: gradient correctness for every architecture
void criterion_7(Harness& h) {
  using grad::ArchSpec;
  struct Case {
    ArchSpec spec;
    grad::LossKind kind;
  };
  std::vector<ArchSpec> specs = {
      {.arch = "gated_rnn", .d_in = 3, .d_out = 3, .hidden = 6, .gated = 5},
      {.arch = "dense_gated_rnn", .d_in = 3, .d_out = 2, .hidden = 5, .gated = 4},
      {.arch = "side_gated_rnn", .d_in = 4, .d_out = 3, .hidden = 5},
      {.arch = "lstm", .d_in = 3, .d_out = 2, .hidden = 4, .layers = 2},
      {.arch = "gru", .d_in = 3, .d_out = 2, .hidden = 4, .layers = 2},
      {.arch = "lru_out", .d_in = 3, .d_out = 2, .hidden = 4, .layers = 1},
      {.arch = "lru_in_out", .d_in = 3, .d_out = 2, .hidden = 4, .layers = 1},
      {.arch = "lru_in_out_mlp", .d_in = 3, .d_out = 2, .hidden = 4, .layers = 1},
  };
  bool pass = true;
  double worst = 0.0;
  std::string worst_arch;
  for (const auto& spec : specs) {
    Rng rng(5400);
    models::SequenceBatch batch(2, 6, spec.d_in, spec.d_out);
    for (double& v : batch.inputs) v = rng.normal(0.0, 0.7);
    for (double& v : batch.targets) v = rng.normal(0.0, 0.7);
    for (double& v : batch.mask) v = 1.0;
    Rng prng(5401);
    grad::ParamSet params = grad::init_params(spec, prng);
    auto builder = [&](grad::Graph& g, const std::map<std::string, grad::Value>& p) {
      return grad::build_loss(g, spec, p, batch, grad::LossKind::kMse).loss;
    };
    auto res = grad::value_and_grad(builder, params);
    const double step = 1e-5;
    Rng pick(5402);
    for (auto& [name, tensor] : params) {
      const grad::Tensor& gt = res.grads.at(name);
      std::vector<long> idx = {0, tensor.numel() - 1,
                               static_cast<long>(pick.next_u64() % tensor.numel())};
      for (long i : idx) {
        double orig = tensor.data[i];
        tensor.data[i] = orig + step;
        double lp = grad::value_and_grad(builder, params).loss;
        tensor.data[i] = orig - step;
        double lm = grad::value_and_grad(builder, params).loss;
        tensor.data[i] = orig;
        double fd = (lp - lm) / (2.0 * step);
        double ad = gt.data[i];
        double denom = std::max(std::abs(fd), std::abs(ad));
        if (denom < 1e-5) continue;  // below the finite-difference noise floor
        double rel = std::abs(fd - ad) / denom;
        if (rel > worst) {
          worst = rel;
          worst_arch = spec.arch;
        }
        pass = pass && rel <= 1e-6;
      }
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "worst relative error %.2e (%s) <= 1e-6", worst,
                worst_arch.c_str());
  h.report(7, pass, buf);
}

// criterion 8: fingerprinting soundness
void criterion_8(Harness& h) {
  Rng rng(5500);
  bool pass = true;
  double worst = 0.0;
  for (int d : {2, 3, 4}) {
    auto t = random_teacher(rng, d);
    for (int i = 0; i < d; ++i) t.w_v(i, i) += 1.5;
    models::ModelRef teacher = t;
    for (int variant = 0; variant < 4; ++variant) {
      models::ModelRef student;
      if (variant == 0)
        student = compiler::compile_full(t);
      else if (variant == 1)
        student = compiler::compile_compact(t);
      else if (variant == 2)
        student = compiler::compile_side(t);
      else
        student = compiler::compile_low_rank(t);
      double dist = analysis::fingerprint_distance(teacher, student);
      worst = std::max(worst, dist);
      pass = pass && dist <= 1e-12;
    }
    // homogeneity: only degree-3 monomials
    auto fp = models::attention_fingerprint(t);
    for (const auto& comp : fp.components)
      for (const auto& [e, c] : comp.terms()) {
        int deg = 0;
        for (int v : e) deg += v;
        pass = pass && deg == 3;
      }
  }
  // analytic GD model: exact coefficients, zero residual
  tasks::IclRegressionSpec spec;
  double eta = tasks::optimal_eta(spec);
  auto rep = analysis::icl_polynomial_terms(
      models::ModelRef(tasks::gd_baseline_as_attention(spec, eta)), spec.d_x, spec.d_y);
  for (int c = 0; c < spec.d_y; ++c) {
    for (double v : rep.coefficients[c]) pass = pass && std::abs(v - eta) <= 1e-12;
    pass = pass && rep.residual[c] == 0.0;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "compiled fingerprint distance max %.2e (<=1e-12), GD terms exact", worst);
  h.report(8, pass, buf);
}

runner::RunRecord run_one(runner::ExperimentConfig cfg, const std::string& root) {
  return runner::run_experiment(cfg, root);
}

// criterion 9: desk-scale teacher-student training
void criterion_9(Harness& h, const std::string& root) {
  runner::ExperimentConfig base;
  base.task = "teacher_student";
  base.teacher_student.d = 3;
  base.teacher_student.seq_len = 32;
  base.teacher_student.teacher_seed = 424242;
  base.seq_len = 32;
  base.arch.arch = "gated_rnn";
  base.arch.hidden = 32;
  base.arch.gated = 12;
  base.iterations = 100000;
  base.batch = 64;
  base.run_analysis = false;  // the criterion re-derives everything below

  std::vector<uint64_t> seeds = {11, 12, 13};
  std::vector<runner::RunRecord> records(seeds.size());
  {
#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
    std::vector<std::thread> workers;
    for (size_t i = 0; i < seeds.size(); ++i)
      workers.emplace_back([&, i] {
        auto cfg = base;
        cfg.seed = seeds[i];
        records[i] = run_one(cfg, root + "/c9");
      });
    for (auto& w : workers) w.join();
#ifdef _OPENMP
    omp_set_num_threads(0 < std::thread::hardware_concurrency()
                            ? static_cast<int>(std::thread::hardware_concurrency())
                            : 2);
#endif
  }

  auto teacher = tasks::make_teacher(base.teacher_student);
  int passed = 0;
  std::string detail;
  for (size_t i = 0; i < seeds.size(); ++i) {
    const auto& rec = records[i];
    double loss = rec.metrics.at("final_train_loss");
    auto loaded = models::load_checkpoint(rec.checkpoint_path);
    const auto& student = std::get<models::GatedRnnParams>(loaded.model);

    Rng arng = Rng(7000 + seeds[i]).split("c9_analysis");
    auto raw = tasks::gen_teacher_student(base.teacher_student, arng, 16);
    auto batch = raw.with_constant_input();
    auto fwd = models::gated_rnn_forward(student, batch);
    auto probe = analysis::probe_kv_q(student, fwd.hidden, teacher, batch, 1e-2);
    double dist =
        analysis::fingerprint_distance(models::ModelRef(teacher), models::ModelRef(student));
    auto [pruned, prep] = analysis::prune(student, 1e-4, batch);
    auto classes = analysis::classify_lambda(pruned, 1e-2);
    bool only_binary = true;
    for (auto c : classes) only_binary = only_binary && c != analysis::LambdaClass::kOther;

    bool ok = loss <= 1e-3 && dist <= 5e-2 && probe.score_kv <= 1e-2 &&
              probe.score_q <= 1e-2 && only_binary && prep.deviation <= 1e-5;
    passed += ok;
    char buf[220];
    std::snprintf(buf, sizeof(buf),
                  "[seed %llu %s loss %.2e dist %.2e kv %.2e q %.2e bin %d prune-dev %.2e]",
                  static_cast<unsigned long long>(seeds[i]), ok ? "ok" : "x", loss, dist,
                  probe.score_kv, probe.score_q, static_cast<int>(only_binary),
                  prep.deviation);
    detail += buf;
  }
  h.report(9, passed >= 2, "majority " + std::to_string(passed) + "/3 " + detail);
}

// criterion 10: desk-scale in-context regression training
void criterion_10(Harness& h, const std::string& root) {
  runner::ExperimentConfig base;
  base.task = "icl_regression";
  base.arch.arch = "gated_rnn";
  base.arch.hidden = 40;
  base.arch.gated = 12;
  base.iterations = 100000;
  base.batch = 64;
  base.run_analysis = false;

  double eta = tasks::optimal_eta(base.icl);
  Rng grng(5600);
  double gd_loss = tasks::gd_baseline_loss(base.icl, eta, 100000, grng);

  std::vector<uint64_t> seeds = {21, 22, 23};
  std::vector<runner::RunRecord> records(seeds.size());
  {
#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
    std::vector<std::thread> workers;
    for (size_t i = 0; i < seeds.size(); ++i)
      workers.emplace_back([&, i] {
        auto cfg = base;
        cfg.seed = seeds[i];
        records[i] = run_one(cfg, root + "/c10");
      });
    for (auto& w : workers) w.join();
#ifdef _OPENMP
    omp_set_num_threads(2);
#endif
  }

  int passed = 0;
  std::string detail;
  char buf0[80];
  std::snprintf(buf0, sizeof(buf0), "gd(eta*)=%.4f ", gd_loss);
  detail += buf0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    const auto& rec = records[i];
    double loss = rec.metrics.at("final_train_loss");
    auto loaded = models::load_checkpoint(rec.checkpoint_path);
    auto terms = analysis::icl_polynomial_terms(loaded.model, base.icl.d_x, base.icl.d_y);
    double worst_coef = 0.0, worst_resid = 0.0;
    for (int c = 0; c < base.icl.d_y; ++c) {
      for (double v : terms.coefficients[c])
        worst_coef = std::max(worst_coef, std::abs(v - eta) / eta);
      worst_resid = std::max(worst_resid, terms.residual[c]);
    }
    bool ok = loss <= 1.10 * gd_loss && worst_coef <= 0.10 && worst_resid <= 1e-2;
    passed += ok;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "[seed %llu %s loss %.4f coef-err %.1f%% resid %.2e]",
                  static_cast<unsigned long long>(seeds[i]), ok ? "ok" : "x", loss,
                  100.0 * worst_coef, worst_resid);
    detail += buf;
  }
  h.report(10, passed >= 2, "majority " + std::to_string(passed) + "/3 " + detail);
}

// criterion 11: constructive transition at the compact count
void criterion_11(Harness& h) {
  Rng rng(5700);
  auto teacher = random_teacher(rng, 4);
  for (int i = 0; i < 4; ++i) teacher.w_v(i, i) += 1.5;
  const int compact_count = 4 * 5 / 2 + 4;  // 14
  std::vector<int> counts;
  for (int n = 8; n <= 18; ++n) counts.push_back(n);
  auto rows = runner::constructive_transition_sweep(teacher, counts, 24, 6, 5701);
  bool pass = true;
  for (const auto& r : rows) {
    if (r.hidden >= compact_count)
      pass = pass && r.exact;
    else
      pass = pass && !r.exact && r.deviation > 1e-8;
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "exact-zero deviation iff hidden >= %d", compact_count);
  h.report(11, pass, buf);
}

// criterion 12: invariance suite
void criterion_12(Harness& h) {
  Rng rng(5800);
  bool pass = true;
  double worst = 0.0;
  auto track = [&](double dev) {
    worst = std::max(worst, dev);
    pass = pass && dev <= 1e-12;
  };

  // gating row permutation and scaling split
  {
    models::GatedRnnParams p;
    p.w_m_in = num::sample_normal(rng, 6, 4, 0.5);
    p.w_x_in = num::sample_normal(rng, 6, 4, 0.5);
    p.lambda_raw = {-1.0, 0.0, 0.3, -0.7, 1.2, 0.9};
    p.lambda_mode = models::LambdaMode::kExp;
    p.w_m_out = num::sample_normal(rng, 5, 6, 0.5);
    p.w_x_out = num::sample_normal(rng, 5, 6, 0.5);
    p.d_readout = num::sample_normal(rng, 3, 5, 0.5);
    models::SequenceBatch batch(2, 8, 4, 3);
    for (double& v : batch.inputs) v = rng.normal();
    auto base = models::gated_rnn_forward(p, batch).outputs;

    models::GatedRnnParams q = p;
    std::vector<int> perm = {4, 2, 0, 3, 1};
    for (int r = 0; r < 5; ++r) {
      for (int i = 0; i < 6; ++i) {
        q.w_m_out(r, i) = p.w_m_out(perm[r], i);
        q.w_x_out(r, i) = p.w_x_out(perm[r], i);
      }
      for (int i = 0; i < 3; ++i) q.d_readout(i, r) = p.d_readout(i, perm[r]);
    }
    track(base.max_abs_diff(models::gated_rnn_forward(q, batch).outputs));

    models::GatedRnnParams s = p;
    for (int i = 0; i < 6; ++i) {
      double c = 1.0 + 0.25 * i;
      for (int j = 0; j < 4; ++j) {
        s.w_m_in(i, j) *= c;
        s.w_x_in(i, j) /= c;
      }
    }
    track(base.max_abs_diff(models::gated_rnn_forward(s, batch).outputs));
  }

  // query-block conjugation on the full construction
  {
    const int d = 3;
    auto att = random_teacher(rng, d);
    auto g = compiler::compile_full(att);
    models::SequenceBatch raw(2, 8, d, d);
    for (double& v : raw.inputs) v = rng.normal();
    auto batch = raw.with_constant_input();
    auto base = models::gated_rnn_forward(g, batch).outputs;
    Matrix pm = num::sample_normal(rng, d, d, 1.0);
    for (int i = 0; i < d; ++i) pm(i, i) += 2.0;
    auto pinv = num::inverse(pm).inv;
    auto q = g;
    Matrix pq = num::matmul(pm, att.w_q);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) q.w_x_in(d * d + i, j) = pq(i, j);
    for (int pidx = 0; pidx < d * d; ++pidx)
      for (int k = 0; k < d; ++k) q.w_m_out(pidx, d * d + k) = pinv(pidx % d, k);
    track(base.max_abs_diff(models::gated_rnn_forward(q, batch).outputs));
  }

  // attention reparametrization with fixed W_k^T W_q
  {
    const int d = 4;
    auto p = random_teacher(rng, d);
    Matrix m = num::sample_normal(rng, d, d, 1.0);
    for (int i = 0; i < d; ++i) m(i, i) += 2.0;
    auto q = p;
    q.w_k = num::matmul(m, p.w_k);
    q.w_q = num::matmul(num::inverse(m).inv.transposed(), p.w_q);
    models::SequenceBatch batch(3, 16, d, d);
    for (double& v : batch.inputs) v = rng.normal();
    track(models::lsa_forward(p, batch).max_abs_diff(models::lsa_forward(q, batch)));
  }

  char buf[120];
  std::snprintf(buf, sizeof(buf), "max deviation over all invariances %.2e (<=1e-12)", worst);
  h.report(12, pass, buf);
}

// criterion 13: associative recall
void criterion_13(Harness& h, const std::string& root) {
  tasks::AssocRecallSpec spec;
  Rng rng(5900);
  auto batch = tasks::gen_assoc_recall(spec, rng, 256);
  auto lsa = tasks::assoc_recall_analytic_lsa(spec);
  double analytic_acc = tasks::recall_accuracy(models::lsa_forward(lsa, batch), batch);
  bool pass = analytic_acc == 1.0;

  runner::ExperimentConfig base;
  base.task = "assoc_recall";
  base.recall = spec;
  base.arch.arch = "side_gated_rnn";
  base.arch.hidden = 64;
  base.iterations = 30000;
  base.batch = 64;
  base.augment_input = false;
  base.run_analysis = false;

  std::vector<uint64_t> seeds = {31, 32};
  std::vector<runner::RunRecord> records(seeds.size());
  {
#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
    std::vector<std::thread> workers;
    for (size_t i = 0; i < seeds.size(); ++i)
      workers.emplace_back([&, i] {
        auto cfg = base;
        cfg.seed = seeds[i];
        records[i] = run_one(cfg, root + "/c13");
      });
    for (auto& w : workers) w.join();
#ifdef _OPENMP
    omp_set_num_threads(2);
#endif
  }

  std::string detail;
  char buf0[64];
  std::snprintf(buf0, sizeof(buf0), "analytic acc %.3f ", analytic_acc);
  detail += buf0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    double acc = records[i].metrics.at("accuracy");
    auto loaded = models::load_checkpoint(records[i].checkpoint_path);
    auto probe = analysis::recall_bilinear_probe(loaded.model, spec.t_pairs);
    bool ok = acc >= 0.95 && probe.max_rank_ratio <= 0.1;
    pass = pass && ok;
    char buf[120];
    std::snprintf(buf, sizeof(buf), "[seed %llu %s acc %.3f rank ratio %.3f]",
                  static_cast<unsigned long long>(seeds[i]), ok ? "ok" : "x", acc,
                  probe.max_rank_ratio);
    detail += buf;
  }
  h.report(13, pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::string root = argc > 1 ? argv[1] : runner::default_run_root() + "/acceptance";
  bool quick = argc > 2 && std::string(argv[2]) == "--skip-training";

  Harness h;
  criterion_1(h);
  criterion_2(h);
  criterion_3(h);
  criterion_4(h);
  criterion_5(h);
  criterion_6(h);
  criterion_7(h);
  criterion_8(h);
  if (!quick) {
    criterion_9(h, root);
    criterion_10(h, root);
  }
  criterion_11(h);
  criterion_12(h);
  if (!quick) criterion_13(h, root);

  if (h.failures == 0)
    std::printf("ALL CRITERIA PASSED\n");
  else
    std::printf("%d CRITERIA FAILED\n", h.failures);
  return h.failures == 0 ? 0 : 1;
}
