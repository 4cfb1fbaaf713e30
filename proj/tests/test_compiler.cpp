#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "linattn/compiler/compile.hpp"
#include "linattn/models/forward.hpp"
#include "linattn/num/linalg.hpp"
#include "test_util.hpp"

using namespace linattn;
using namespace testutil;
using compiler::ConstructionReport;
using models::SequenceBatch;

namespace {

double compare_on_random_inputs(const models::ModelRef& teacher,
                                const models::ModelRef& student, int d, int seq_len,
                                int n_seq, uint64_t seed) {
  return compiler::verify_equivalence(teacher, student, d, seq_len, n_seq, seed)
      .max_abs_deviation;
}

models::AttentionParams truncated_rank_attention(Rng& rng, int d, int rank) {
  auto p = random_attention(rng, d);
  auto truncate = [rank](const Matrix& m) {
    auto s = num::svd(m);
    Matrix us = s.u;
    for (int i = 0; i < us.rows; ++i)
      for (int j = 0; j < us.cols; ++j) us(i, j) *= (j < rank ? s.s[j] : 0.0);
    return num::matmul(us, s.v.transposed());
  };
  p.w_v = truncate(p.w_v);
  p.w_k = truncate(p.w_k);
  p.w_q = truncate(p.w_q);
  return p;
}

}  // namespace

TEST_CASE("compile_full d=1 scalar hand recursion") {
  models::AttentionParams p;
  p.w_v = Matrix{{1.0}};
  p.w_k = Matrix{{1.0}};
  p.w_q = Matrix{{1.0}};
  auto g = compiler::compile_full(p);
  CHECK(g.hidden() == 2);
  SequenceBatch batch(1, 4, 1, 1);
  double xs[4] = {0.5, -1.0, 2.0, 1.5};
  for (int t = 0; t < 4; ++t) batch.input_at(0, t)[0] = xs[t];
  auto out = models::gated_rnn_forward(g, batch.with_constant_input()).outputs;
  double acc = 0.0;
  for (int t = 0; t < 4; ++t) {
    acc += xs[t] * xs[t];
    CHECK(out.at(0, t)[0] == doctest::Approx(acc * xs[t]).epsilon(1e-12));
  }
}

TEST_CASE("compile_full counts") {
  Rng rng(60);
  auto p = random_attention(rng, 4);
  auto g = compiler::compile_full(p);
  CHECK(g.hidden() == 20);
  CHECK(g.gated_outputs() == 16);
  // integrators then memoryless
  auto lam = g.lambda();
  for (int i = 0; i < 16; ++i) CHECK(lam[i] == 1.0);
  for (int i = 16; i < 20; ++i) CHECK(lam[i] == 0.0);
}

TEST_CASE("compile_full matches attention for d in 2..6") {
  Rng rng(61);
  for (int d = 2; d <= 6; ++d) {
    auto p = random_attention(rng, d);
    auto g = compiler::compile_full(p);
    CHECK(compare_on_random_inputs(p, g, d, 32, 8, 100 + d) <= 1e-10);
  }
}

TEST_CASE("compile_compact counts and symmetric no-op") {
  Rng rng(62);
  auto p = random_attention(rng, 4);
  for (int i = 0; i < 4; ++i) p.w_v(i, i) += 2.0;
  auto g = compiler::compile_compact(p);
  CHECK(g.hidden() == 14);  // d(d+1)/2 + d

  // with W_k = W_v the query reparametrization is the identity on W_q
  auto sym = p;
  sym.w_k = sym.w_v;
  auto gs = compiler::compile_compact(sym);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(gs.w_x_in(10 + i, j) == doctest::Approx(sym.w_q(i, j)).epsilon(1e-9));
}

TEST_CASE("compile_compact matches attention for invertible values") {
  Rng rng(63);
  for (int d = 2; d <= 6; ++d) {
    auto p = random_attention(rng, d);
    for (int i = 0; i < d; ++i) p.w_v(i, i) += 1.5;  // keep it invertible
    auto g = compiler::compile_compact(p);
    CHECK(g.hidden() == d * (d + 1) / 2 + d);
    CHECK(compare_on_random_inputs(p, g, d, 32, 8, 200 + d) <= 1e-9);
  }
}

TEST_CASE("compile_compact rejects singular value matrix") {
  Rng rng(64);
  auto p = random_attention(rng, 3);
  p.w_v = Matrix(3, 3);  // rank 0
  CHECK_THROWS_AS(compiler::compile_compact(p), SingularMatrixError);
}

TEST_CASE("compile_low_rank neuron counts") {
  Rng rng(65);
  // d=12 with ranks forced to 6 -> 6 * 7 = 42
  auto p = truncated_rank_attention(rng, 12, 6);
  auto g = compiler::compile_low_rank(p);
  CHECK(g.hidden() == 42);

  // full rank -> d(d+1)
  auto pf = random_attention(rng, 5);
  for (int i = 0; i < 5; ++i) pf.w_v(i, i) += 2.0;
  auto gf = compiler::compile_low_rank(pf);
  CHECK(gf.hidden() == 5 * 6);
}

TEST_CASE("compile_low_rank matches attention") {
  Rng rng(66);
  // rank-2 teacher at d=6 -> 2*3 = 6 neurons
  models::AttentionParams p;
  auto a = num::sample_normal(rng, 6, 2, 1.0);
  auto b = num::sample_normal(rng, 2, 6, 1.0);
  p.w_v = num::matmul(a, b);
  auto a2 = num::sample_normal(rng, 6, 2, 1.0);
  auto b2 = num::sample_normal(rng, 2, 6, 1.0);
  p.w_k = num::matmul(a2, b2);
  p.w_q = Matrix::identity(6);
  // rank(W_k^T W_q) = rank(W_k) = 2, rank(W_v) = 2
  auto g = compiler::compile_low_rank(p);
  CHECK(g.hidden() == 2 * 3);
  CHECK(compare_on_random_inputs(p, g, 6, 32, 8, 300) <= 1e-9);

  // and the generic full-rank case agrees too
  auto pf = random_attention(rng, 4);
  auto gf = compiler::compile_low_rank(pf);
  CHECK(compare_on_random_inputs(pf, gf, 4, 32, 8, 301) <= 1e-9);
}

TEST_CASE("compile_side scalar case and shapes") {
  models::AttentionParams p;
  p.w_v = Matrix{{2.0}};
  p.w_k = Matrix{{0.5}};
  p.w_q = Matrix{{1.0}};
  auto g = compiler::compile_side(p);
  CHECK(g.hidden() == 1);
  SequenceBatch batch(1, 3, 1, 1);
  double xs[3] = {1.0, 2.0, -1.0};
  for (int t = 0; t < 3; ++t) batch.input_at(0, t)[0] = xs[t];
  auto out = models::side_gated_rnn_forward(g, batch).outputs;
  double acc = 0.0;
  for (int t = 0; t < 3; ++t) {
    acc += 2.0 * 0.5 * xs[t] * xs[t];
    CHECK(out.at(0, t)[0] == doctest::Approx(acc * xs[t]).epsilon(1e-12));
  }

  Rng rng(67);
  auto p4 = random_attention(rng, 4);
  auto g4 = compiler::compile_side(p4);
  CHECK(g4.w_side.rows == 16);
  CHECK(g4.w_side.cols == 4);
}

TEST_CASE("compile_side matches attention for d in 2..6") {
  Rng rng(68);
  for (int d = 2; d <= 6; ++d) {
    auto p = random_attention(rng, d);
    auto g = compiler::compile_side(p);
    CHECK(g.hidden() == d * d);
    CHECK(compare_on_random_inputs(p, g, d, 32, 8, 400 + d) <= 1e-10);
  }
}

TEST_CASE("compile_lstm_attention linearized is exact") {
  Rng rng(69);
  // zero weights -> zero outputs
  models::AttentionParams z;
  z.w_v = Matrix(2, 2);
  z.w_k = Matrix(2, 2);
  z.w_q = Matrix(2, 2);
  auto lz = compiler::compile_lstm_attention(z);
  auto batch = random_batch(rng, 2, 8, 2);
  auto outz = models::lstm_forward(lz, batch);
  for (double v : outz.values) CHECK(v == 0.0);

  auto p = random_attention(rng, 2);
  auto l = compiler::compile_lstm_attention(p);
  CHECK(compare_on_random_inputs(p, l, 2, 16, 4, 500) <= 1e-10);
  auto p3 = random_attention(rng, 3);
  auto l3 = compiler::compile_lstm_attention(p3);
  CHECK(compare_on_random_inputs(p3, l3, 3, 16, 4, 501) <= 1e-10);
}

TEST_CASE("compile_lstm_attention standard mode error is O(eps)") {
  Rng rng(70);
  auto p = random_attention(rng, 2);
  std::vector<double> epses = {1e-1, 1e-2, 1e-3, 1e-4};
  std::vector<double> errs;
  for (double eps : epses) {
    compiler::LstmCompileOptions opts;
    opts.mode = models::ActivationMode::kStandard;
    opts.epsilon = eps;
    auto l = compiler::compile_lstm_attention(p, opts);
    errs.push_back(compare_on_random_inputs(p, l, 2, 4, 4, 600));
  }
  double n = epses.size(), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < epses.size(); ++i) {
    double lx = std::log10(epses[i]), ly = std::log10(errs[i]);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("compile_lstm_gated_rnn forget bias and exactness") {
  // lambda = 1/2 -> forget bias 0
  Rng rng(71);
  auto g = random_gated_rnn(rng, 3, 4, 4, 2);
  g.lambda_mode = models::LambdaMode::kDirect01;
  g.lambda_raw.assign(4, 0.5);
  auto l = compiler::compile_lstm_gated_rnn(g);
  for (double b : l.layers[0].b_f) CHECK(b == doctest::Approx(0.0).epsilon(1e-12));

  // tiny instance, hand unroll at T=2
  models::GatedRnnParams tiny;
  tiny.w_m_in = Matrix{{1.0}};
  tiny.w_x_in = Matrix{{1.0}};
  tiny.lambda_raw = {0.5};
  tiny.lambda_mode = models::LambdaMode::kDirect01;
  tiny.w_m_out = Matrix{{1.0}};
  tiny.w_x_out = Matrix{{1.0}};
  tiny.d_readout = Matrix{{1.0}};
  auto ltiny = compiler::compile_lstm_gated_rnn(tiny);
  SequenceBatch tb(1, 2, 1, 1);
  tb.input_at(0, 0)[0] = 2.0;
  tb.input_at(0, 1)[0] = -1.0;
  auto lo = models::lstm_forward(ltiny, tb);
  // h1 = 4, y = 16; h2 = 0.5*4 + 1 = 3, y = 9
  CHECK(lo.at(0, 0)[0] == doctest::Approx(16.0).epsilon(1e-12));
  CHECK(lo.at(0, 1)[0] == doctest::Approx(9.0).epsilon(1e-12));

  // random trained-style gated RNN (exp parametrization)
  auto g2 = random_gated_rnn(rng, 3, 6, 5, 3);
  auto l2 = compiler::compile_lstm_gated_rnn(g2);
  auto batch = random_batch(rng, 4, 16, 3, 3);
  auto want = models::gated_rnn_forward(g2, batch).outputs;
  auto got = models::lstm_forward(l2, batch);
  CHECK(want.max_abs_diff(got) <= 1e-10);

  // compiled-from-attention RNN with exact 0/1 lambdas
  auto att = random_attention(rng, 3);
  auto gfull = compiler::compile_full(att);
  auto lfull = compiler::compile_lstm_gated_rnn(gfull);
  auto aug = batch.with_constant_input();
  auto want2 = models::gated_rnn_forward(gfull, aug).outputs;
  auto got2 = models::lstm_forward(lfull, aug);
  CHECK(want2.max_abs_diff(got2) <= 1e-10);
}

TEST_CASE("compile_recurrence_to_decayed_lsa") {
  // lambda = 0 -> y_t = x_t
  {
    auto p = compiler::compile_recurrence_to_decayed_lsa({0.0, 0.0, 0.0});
    Rng rng(72);
    auto batch = random_batch(rng, 1, 5, 3);
    auto out = models::decayed_lsa_forward(p, batch);
    for (int t = 0; t < 5; ++t)
      for (int i = 0; i < 3; ++i)
        CHECK(out.at(0, t)[i] == doctest::Approx(batch.input_at(0, t)[i]).epsilon(1e-12));
  }
  // lambda = 1 -> cumulative sum
  {
    auto p = compiler::compile_recurrence_to_decayed_lsa({1.0, 1.0});
    Rng rng(73);
    auto batch = random_batch(rng, 1, 6, 2);
    auto out = models::decayed_lsa_forward(p, batch);
    double acc0 = 0.0, acc1 = 0.0;
    for (int t = 0; t < 6; ++t) {
      acc0 += batch.input_at(0, t)[0];
      acc1 += batch.input_at(0, t)[1];
      CHECK(out.at(0, t)[0] == doctest::Approx(acc0).epsilon(1e-12));
      CHECK(out.at(0, t)[1] == doctest::Approx(acc1).epsilon(1e-12));
    }
  }
  // random lambda, d=5, T=20 vs the direct recurrence
  {
    Rng rng(74);
    std::vector<double> lam(5);
    for (double& l : lam) l = rng.next_unit();
    auto p = compiler::compile_recurrence_to_decayed_lsa(lam);
    auto batch = random_batch(rng, 3, 20, 5);
    auto out = models::decayed_lsa_forward(p, batch);
    for (int b = 0; b < 3; ++b) {
      std::vector<double> y(5, 0.0);
      for (int t = 0; t < 20; ++t) {
        for (int i = 0; i < 5; ++i) y[i] = lam[i] * y[i] + batch.input_at(b, t)[i];
        for (int i = 0; i < 5; ++i)
          CHECK(std::abs(out.at(b, t)[i] - y[i]) <= 1e-12 * std::max(1.0, std::abs(y[i])));
      }
    }
  }
}

TEST_CASE("verify_equivalence reports and negative control") {
  Rng rng(75);
  auto p = random_attention(rng, 3);
  auto self = compiler::verify_equivalence(p, p, 3, 16, 4, 900);
  CHECK(self.max_abs_deviation == 0.0);

  auto g = compiler::compile_full(p);
  auto rep = compiler::verify_equivalence(p, g, 3, 32, 8, 901);
  CHECK(rep.max_abs_deviation <= 1e-10);
  CHECK(rep.hidden_count == 12);
  CHECK(rep.input_width == 4);
  CHECK(rep.source_arch == "lsa");
  CHECK(rep.target_arch == "gated_rnn");

  auto bad = g;
  bad.w_x_in(0, 0) += 0.05;
  auto repb = compiler::verify_equivalence(p, bad, 3, 32, 8, 902);
  CHECK(repb.max_abs_deviation > 1e-3);

  // report serializes
  auto j = rep.to_json();
  CHECK(j.find("max_abs_deviation") != std::string::npos);
}

TEST_CASE("gating invariances leave outputs unchanged") {
  Rng rng(76);
  auto p = random_gated_rnn(rng, 4, 6, 5, 3);
  auto batch = random_batch(rng, 2, 8, 4, 3);
  auto base = models::gated_rnn_forward(p, batch).outputs;

  SUBCASE("hidden neuron permutation") {
    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    models::GatedRnnParams q = p;
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 4; ++j) {
        q.w_m_in(i, j) = p.w_m_in(perm[i], j);
        q.w_x_in(i, j) = p.w_x_in(perm[i], j);
      }
      q.lambda_raw[i] = p.lambda_raw[perm[i]];
      for (int r = 0; r < 5; ++r) {
        q.w_m_out(r, i) = p.w_m_out(r, perm[i]);
        q.w_x_out(r, i) = p.w_x_out(r, perm[i]);
      }
    }
    auto out = models::gated_rnn_forward(q, batch).outputs;
    CHECK(base.max_abs_diff(out) <= 1e-12);
  }

  SUBCASE("output gating row permutation with readout columns") {
    std::vector<int> perm = {4, 2, 0, 3, 1};
    models::GatedRnnParams q = p;
    for (int r = 0; r < 5; ++r) {
      for (int i = 0; i < 6; ++i) {
        q.w_m_out(r, i) = p.w_m_out(perm[r], i);
        q.w_x_out(r, i) = p.w_x_out(perm[r], i);
      }
      for (int i = 0; i < 3; ++i) q.d_readout(i, r) = p.d_readout(i, perm[r]);
    }
    auto out = models::gated_rnn_forward(q, batch).outputs;
    CHECK(base.max_abs_diff(out) <= 1e-12);
  }

  SUBCASE("row scaling split between the two gating matrices") {
    models::GatedRnnParams q = p;
    Rng crng(77);
    for (int i = 0; i < 6; ++i) {
      double c = crng.uniform(0.5, 2.0);
      for (int j = 0; j < 4; ++j) {
        q.w_m_in(i, j) *= c;
        q.w_x_in(i, j) /= c;
      }
    }
    for (int r = 0; r < 5; ++r) {
      double c = crng.uniform(0.5, 2.0);
      for (int i = 0; i < 6; ++i) {
        q.w_m_out(r, i) *= c;
        q.w_x_out(r, i) /= c;
      }
    }
    auto out = models::gated_rnn_forward(q, batch).outputs;
    CHECK(base.max_abs_diff(out) <= 1e-11);
  }
}

TEST_CASE("query block conjugation invariance on the full construction") {
  Rng rng(78);
  const int d = 3;
  auto att = random_attention(rng, d);
  auto g = compiler::compile_full(att);
  auto batch = random_batch(rng, 2, 8, d).with_constant_input();
  auto base = models::gated_rnn_forward(g, batch).outputs;

  Matrix pm = num::sample_normal(rng, d, d, 1.0);
  for (int i = 0; i < d; ++i) pm(i, i) += 2.0;
  auto pinv = num::inverse(pm).inv;

  models::GatedRnnParams q = g;
  // query rows now carry P * W_q
  Matrix pq = num::matmul(pm, att.w_q);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) q.w_x_in(d * d + i, j) = pq(i, j);
  // gated unit p reads the queries through row (p mod d) of P^-1
  for (int pidx = 0; pidx < d * d; ++pidx)
    for (int k = 0; k < d; ++k) q.w_m_out(pidx, d * d + k) = pinv(pidx % d, k);
  auto out = models::gated_rnn_forward(q, batch).outputs;
  CHECK(base.max_abs_diff(out) <= 1e-11);
}

TEST_CASE("attention key-query reparametrization invariance") {
  Rng rng(79);
  const int d = 4;
  auto p = random_attention(rng, d);
  Matrix m = num::sample_normal(rng, d, d, 1.0);
  for (int i = 0; i < d; ++i) m(i, i) += 2.0;
  auto q = p;
  q.w_k = num::matmul(m, p.w_k);
  q.w_q = num::matmul(num::inverse(m).inv.transposed(), p.w_q);
  auto batch = random_batch(rng, 3, 16, d);
  auto a = models::lsa_forward(p, batch);
  auto b = models::lsa_forward(q, batch);
  CHECK(a.max_abs_diff(b) <= 1e-11);
}

TEST_CASE("every compiler output matches its source across d and T") {
  Rng rng(80);
  for (int d : {1, 2, 4, 8}) {
    auto p = random_attention(rng, d);
    for (int i = 0; i < d; ++i) p.w_v(i, i) += 1.5;
    for (int T : {1, 2, 32}) {
      auto gf = compiler::compile_full(p);
      CHECK(compare_on_random_inputs(p, gf, d, T, 4, 1000 + d * 10 + T) <= 1e-10);
      auto gc = compiler::compile_compact(p);
      CHECK(compare_on_random_inputs(p, gc, d, T, 4, 1100 + d * 10 + T) <= 1e-9);
      auto gs = compiler::compile_side(p);
      CHECK(compare_on_random_inputs(p, gs, d, T, 4, 1200 + d * 10 + T) <= 1e-10);
      auto gl = compiler::compile_low_rank(p);
      CHECK(compare_on_random_inputs(p, gl, d, T, 4, 1300 + d * 10 + T) <= 1e-9);
    }
  }
}
