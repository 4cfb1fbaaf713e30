#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "linattn/models/checkpoint.hpp"
#include "linattn/models/fingerprint.hpp"
#include "linattn/models/forward.hpp"
#include "linattn/num/linalg.hpp"
#include "test_util.hpp"

using namespace linattn;
using namespace testutil;
using models::Outputs;
using models::SequenceBatch;

namespace {

// Quadratic-time double-sum evaluation, the independent attention oracle.
Outputs lsa_naive(const models::AttentionParams& p, const SequenceBatch& batch) {
  const int d = p.dim();
  Outputs out(batch.batch, batch.seq_len, d);
  for (int b = 0; b < batch.batch; ++b)
    for (int t = 0; t < batch.seq_len; ++t) {
      auto q = num::matvec(p.w_q, std::vector<double>(batch.input_at(b, t),
                                                      batch.input_at(b, t) + d));
      for (int tp = 0; tp <= t; ++tp) {
        std::vector<double> x(batch.input_at(b, tp), batch.input_at(b, tp) + d);
        auto v = num::matvec(p.w_v, x);
        auto k = num::matvec(p.w_k, x);
        double kq = 0.0;
        for (int j = 0; j < d; ++j) kq += k[j] * q[j];
        for (int i = 0; i < d; ++i) out.at(b, t)[i] += v[i] * kq;
      }
    }
  return out;
}

}  // namespace

TEST_CASE("lsa single step and zero input") {
  Rng rng(31);
  auto p = random_attention(rng, 3);
  auto batch = random_batch(rng, 2, 1, 3);
  auto out = models::lsa_forward(p, batch);
  for (int b = 0; b < 2; ++b) {
    std::vector<double> x(batch.input_at(b, 0), batch.input_at(b, 0) + 3);
    auto v = num::matvec(p.w_v, x);
    auto k = num::matvec(p.w_k, x);
    auto q = num::matvec(p.w_q, x);
    double kq = k[0] * q[0] + k[1] * q[1] + k[2] * q[2];
    for (int i = 0; i < 3; ++i)
      CHECK(out.at(b, 0)[i] == doctest::Approx(v[i] * kq).epsilon(1e-12));
  }

  SequenceBatch zero(1, 4, 3, 3);
  auto zout = models::lsa_forward(p, zero);
  for (double v : zout.values) CHECK(v == 0.0);
}

TEST_CASE("lsa streaming equals naive double sum") {
  Rng rng(32);
  for (int d : {3, 8}) {
    auto p = random_attention(rng, d);
    auto batch = random_batch(rng, 3, d == 3 ? 5 : 64, d);
    auto fast = models::lsa_forward(p, batch);
    auto slow = lsa_naive(p, batch);
    double scale = 0.0;
    for (double v : slow.values) scale = std::max(scale, std::abs(v));
    CHECK(fast.max_abs_diff(slow) <= 1e-12 * (1.0 + scale));
  }
}

TEST_CASE("gated rnn lambda=0 is memoryless") {
  Rng rng(33);
  auto p = random_gated_rnn(rng, 3, 6, 5, 2);
  p.lambda_mode = models::LambdaMode::kDirect01;
  p.lambda_raw.assign(6, 0.0);
  auto batch = random_batch(rng, 1, 6, 3, 2);
  auto out1 = models::gated_rnn_forward(p, batch);
  // permute earlier inputs; final-step output must not move
  auto batch2 = batch;
  for (int j = 0; j < 3; ++j) {
    std::swap(batch2.input_at(0, 0)[j], batch2.input_at(0, 3)[j]);
    std::swap(batch2.input_at(0, 1)[j], batch2.input_at(0, 2)[j]);
  }
  auto out2 = models::gated_rnn_forward(p, batch2);
  for (int i = 0; i < 2; ++i)
    CHECK(out1.outputs.at(0, 5)[i] == doctest::Approx(out2.outputs.at(0, 5)[i]).epsilon(1e-14));
}

TEST_CASE("gated rnn lambda=1 scalar integrates squares") {
  models::GatedRnnParams p;
  p.w_m_in = Matrix{{1.0}};
  p.w_x_in = Matrix{{1.0}};
  p.lambda_raw = {1.0};
  p.lambda_mode = models::LambdaMode::kDirect01;
  p.w_m_out = Matrix{{1.0}};
  p.w_x_out = Matrix{{1.0}};
  p.d_readout = Matrix{{1.0}};
  SequenceBatch batch(1, 4, 1, 1);
  double xs[4] = {1.0, -2.0, 0.5, 3.0};
  for (int t = 0; t < 4; ++t) batch.input_at(0, t)[0] = xs[t];
  auto res = models::gated_rnn_forward(p, batch);
  double acc = 0.0;
  for (int t = 0; t < 4; ++t) {
    acc += xs[t] * xs[t];
    CHECK(res.hidden.at(0, t)[0] == doctest::Approx(acc).epsilon(1e-14));
    CHECK(res.outputs.at(0, t)[0] == doctest::Approx(acc * acc).epsilon(1e-14));
  }
}

TEST_CASE("side gated rnn zero paths") {
  Rng rng(34);
  auto p = random_side_gated(rng, 4, 5, 3);
  // dead input gating -> h stays 0 -> y = 0
  auto pz = p;
  pz.w_m_in = Matrix(5, 4);
  auto batch = random_batch(rng, 2, 4, 4, 3);
  auto out = models::side_gated_rnn_forward(pz, batch);
  for (double v : out.outputs.values) CHECK(v == 0.0);
  // zero side matrix -> y = 0
  auto ps = p;
  ps.w_side = Matrix(5, 4);
  auto out2 = models::side_gated_rnn_forward(ps, batch);
  for (double v : out2.outputs.values) CHECK(v == 0.0);
}

TEST_CASE("dense rnn reduces to diagonal and handles A=0") {
  Rng rng(35);
  auto diag = random_gated_rnn(rng, 3, 6, 5, 2);
  auto lam = diag.lambda();
  models::DenseGatedRnnParams dense;
  dense.w_m_in = diag.w_m_in;
  dense.w_x_in = diag.w_x_in;
  dense.a_rec = Matrix(6, 6);
  for (int i = 0; i < 6; ++i) dense.a_rec(i, i) = lam[i];
  dense.w_m_out = diag.w_m_out;
  dense.w_x_out = diag.w_x_out;
  dense.d_readout = diag.d_readout;
  auto batch = random_batch(rng, 2, 7, 3, 2);
  auto a = models::gated_rnn_forward(diag, batch).outputs;
  auto b = models::dense_gated_rnn_forward(dense, batch);
  CHECK(a.max_abs_diff(b) < 1e-12);

  dense.a_rec = Matrix(6, 6);
  auto memless = models::dense_gated_rnn_forward(dense, batch);
  auto batch2 = batch;
  for (int j = 0; j < 3; ++j) std::swap(batch2.input_at(0, 0)[j], batch2.input_at(0, 3)[j]);
  auto memless2 = models::dense_gated_rnn_forward(dense, batch2);
  for (int i = 0; i < 2; ++i)
    CHECK(memless.at(0, 6)[i] == doctest::Approx(memless2.at(0, 6)[i]).epsilon(1e-14));
}

TEST_CASE("dense rnn matches 3-step unroll oracle") {
  Rng rng(36);
  auto p = random_dense_rnn(rng, 2, 3, 3, 2);
  auto batch = random_batch(rng, 1, 3, 2, 2);
  auto out = models::dense_gated_rnn_forward(p, batch);

  std::vector<double> h(3, 0.0);
  for (int t = 0; t < 3; ++t) {
    std::vector<double> x(batch.input_at(0, t), batch.input_at(0, t) + 2);
    auto gm = num::matvec(p.w_m_in, x);
    auto gx = num::matvec(p.w_x_in, x);
    auto ah = num::matvec(p.a_rec, h);
    for (int i = 0; i < 3; ++i) h[i] = ah[i] + gm[i] * gx[i];
    auto om = num::matvec(p.w_m_out, h);
    auto ox = num::matvec(p.w_x_out, h);
    std::vector<double> g(3);
    for (int i = 0; i < 3; ++i) g[i] = om[i] * ox[i];
    auto y = num::matvec(p.d_readout, g);
    for (int i = 0; i < 2; ++i) CHECK(out.at(0, t)[i] == doctest::Approx(y[i]).epsilon(1e-13));
  }
}

TEST_CASE("lstm saturated gates integrate, zero stays zero") {
  Rng rng(37);
  auto p = random_lstm(rng, 2, 4, 1, 2);
  for (auto& b : p.layers[0].b_f) b = 40.0;   // f ~= 1
  for (auto& b : p.layers[0].b_o) b = 40.0;   // o ~= 1
  p.layers[0].v_f = Matrix(4, 4);
  p.layers[0].v_o = Matrix(4, 4);
  p.layers[0].v_c = Matrix(4, 4);
  p.layers[0].v_g = Matrix(4, 4);
  auto batch = random_batch(rng, 1, 3, 2, 2, 0.25);
  auto out = models::lstm_forward(p, batch);
  // c_t = sum_s g_s * ctilde_s; y = readout(tanh(c)) with o = 1
  std::vector<double> c(4, 0.0);
  for (int t = 0; t < 3; ++t) {
    std::vector<double> x(batch.input_at(0, t), batch.input_at(0, t) + 2);
    auto u = num::matvec(p.embed, x);
    auto zc = num::matvec(p.layers[0].u_c, u);
    auto zg = num::matvec(p.layers[0].u_g, u);
    std::vector<double> hh(4);
    for (int i = 0; i < 4; ++i) {
      c[i] += (1.0 / (1.0 + std::exp(-zg[i]))) * std::tanh(zc[i]);
      hh[i] = std::tanh(c[i]);
    }
    auto y = num::matvec(p.readout, hh);
    for (int i = 0; i < 2; ++i)
      CHECK(out.at(0, t)[i] == doctest::Approx(y[i]).epsilon(1e-9));
  }

  SequenceBatch zero(1, 5, 2, 2);
  auto pz = random_lstm(rng, 2, 4, 2, 2);
  auto zout = models::lstm_forward(pz, zero);
  for (double v : zout.values) CHECK(v == 0.0);
}

TEST_CASE("lstm matches 2-step unroll oracle") {
  Rng rng(38);
  auto p = random_lstm(rng, 2, 3, 1, 2);
  for (auto& b : p.layers[0].b_f) b = rng.normal();
  auto batch = random_batch(rng, 1, 2, 2, 2);
  auto out = models::lstm_forward(p, batch);

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  std::vector<double> h(3, 0.0), c(3, 0.0);
  const auto& L = p.layers[0];
  for (int t = 0; t < 2; ++t) {
    std::vector<double> x(batch.input_at(0, t), batch.input_at(0, t) + 2);
    auto u = num::matvec(p.embed, x);
    auto zf = num::matvec(L.u_f, u);
    auto zc = num::matvec(L.u_c, u);
    auto zg = num::matvec(L.u_g, u);
    auto zo = num::matvec(L.u_o, u);
    auto vf = num::matvec(L.v_f, h);
    auto vc = num::matvec(L.v_c, h);
    auto vg = num::matvec(L.v_g, h);
    auto vo = num::matvec(L.v_o, h);
    for (int i = 0; i < 3; ++i) {
      double f = sig(zf[i] + vf[i] + L.b_f[i]);
      double cc = std::tanh(zc[i] + vc[i] + L.b_c[i]);
      double g = sig(zg[i] + vg[i] + L.b_g[i]);
      double o = sig(zo[i] + vo[i] + L.b_o[i]);
      c[i] = f * c[i] + g * cc;
      h[i] = o * std::tanh(c[i]);
    }
    auto y = num::matvec(p.readout, h);
    for (int i = 0; i < 2; ++i)
      CHECK(out.at(0, t)[i] == doctest::Approx(y[i]).epsilon(1e-12));
  }
}

TEST_CASE("gru matches 2-step unroll oracle") {
  Rng rng(39);
  auto p = random_gru(rng, 2, 3, 1, 2);
  for (auto& b : p.layers[0].b_z) b = rng.normal();
  auto batch = random_batch(rng, 1, 2, 2, 2);
  auto out = models::gru_forward(p, batch);

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  std::vector<double> h(3, 0.0);
  const auto& L = p.layers[0];
  for (int t = 0; t < 2; ++t) {
    std::vector<double> x(batch.input_at(0, t), batch.input_at(0, t) + 2);
    auto u = num::matvec(p.embed, x);
    auto zr = num::matvec(L.u_r, u);
    auto zz = num::matvec(L.u_z, u);
    auto vr = num::matvec(L.v_r, h);
    auto vz = num::matvec(L.v_z, h);
    std::vector<double> rh(3);
    for (int i = 0; i < 3; ++i) rh[i] = sig(zr[i] + vr[i] + L.b_r[i]) * h[i];
    auto zh = num::matvec(L.u_h, u);
    auto vh = num::matvec(L.v_h, rh);
    for (int i = 0; i < 3; ++i) {
      double z = sig(zz[i] + vz[i] + L.b_z[i]);
      double cand = std::tanh(zh[i] + vh[i] + L.b_h[i]);
      h[i] = (1.0 - z) * h[i] + z * cand;
    }
    auto y = num::matvec(p.readout, h);
    for (int i = 0; i < 2; ++i)
      CHECK(out.at(0, t)[i] == doctest::Approx(y[i]).epsilon(1e-12));
  }
}

TEST_CASE("lru zero phase gives real recurrence, B=0 leaves skip path") {
  Rng rng(40);
  auto p = random_lru(rng, 3, 3, 1, 2, models::LruPostBlock::kGluOut);
  // theta -> -inf means phase exp(theta_log) -> 0
  for (auto& th : p.layers[0].theta_log) th = -1e9;
  // make B real; with phase 0 the state never leaves the real axis
  for (auto& v : p.layers[0].b_in.data) v = {v.real(), 0.0};
  auto batch = random_batch(rng, 1, 4, 3, 2);
  auto out = models::lru_forward(p, batch);
  for (double v : out.values) CHECK(std::isfinite(v));

  // independent re/im split oracle, T=2
  auto p2 = random_lru(rng, 3, 3, 1, 2, models::LruPostBlock::kGluOut);
  auto b2 = random_batch(rng, 1, 2, 3, 2);
  auto got = models::lru_forward(p2, b2);
  const auto& L = p2.layers[0];
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  std::vector<double> hre(3, 0.0), him(3, 0.0);
  for (int t = 0; t < 2; ++t) {
    std::vector<double> x(b2.input_at(0, t), b2.input_at(0, t) + 3);
    auto u = num::matvec(p2.embed, x);
    for (int i = 0; i < 3; ++i) {
      double mag = std::exp(-std::exp(L.nu_log[i]));
      double ph = std::exp(L.theta_log[i]);
      double lr = mag * std::cos(ph), li = mag * std::sin(ph);
      double bre = 0.0, bim = 0.0;
      for (int j = 0; j < 3; ++j) {
        bre += L.b_in(i, j).real() * u[j];
        bim += L.b_in(i, j).imag() * u[j];
      }
      double g = std::exp(L.gamma_log[i]);
      double nre = lr * hre[i] - li * him[i] + g * bre;
      double nim = lr * him[i] + li * hre[i] + g * bim;
      hre[i] = nre;
      him[i] = nim;
    }
    std::vector<double> yt(3, 0.0);
    for (int i = 0; i < 3; ++i) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j)
        s += L.c_out(i, j).real() * hre[j] - L.c_out(i, j).imag() * him[j];
      yt[i] = s;
    }
    auto skip = num::matvec(L.d_skip, u);
    for (int i = 0; i < 3; ++i) yt[i] += skip[i];
    auto gm = num::matvec(L.wm_out, yt);
    auto gx = num::matvec(L.wx_out, yt);
    std::vector<double> g(3);
    for (int i = 0; i < 3; ++i) g[i] = sig(gm[i]) * gx[i];
    auto y = num::matvec(p2.readout, g);
    for (int i = 0; i < 2; ++i)
      CHECK(got.at(0, t)[i] == doctest::Approx(y[i]).epsilon(1e-12));
  }

  // B = 0: only the skip path remains; output at step t depends on x_t only
  auto p3 = p2;
  for (auto& v : p3.layers[0].b_in.data) v = {0.0, 0.0};
  auto b3 = b2;
  for (int j = 0; j < 3; ++j) b3.input_at(0, 0)[j] += 5.0;
  auto o1 = models::lru_forward(p3, b2);
  auto o2 = models::lru_forward(p3, b3);
  for (int i = 0; i < 2; ++i)
    CHECK(o1.at(0, 1)[i] == doctest::Approx(o2.at(0, 1)[i]).epsilon(1e-13));
}

TEST_CASE("lru in+out variants run and differ from out-only") {
  Rng rng(41);
  auto batch = random_batch(rng, 2, 3, 3, 2);
  auto pin = random_lru(rng, 3, 3, 2, 2, models::LruPostBlock::kGluInOut);
  auto out = models::lru_forward(pin, batch);
  CHECK(out.values.size() == 2u * 3 * 2);
  auto pmlp = random_lru(rng, 3, 3, 1, 2, models::LruPostBlock::kMlpInOut);
  auto out2 = models::lru_forward(pmlp, batch);
  for (double v : out2.values) CHECK(std::isfinite(v));
}

TEST_CASE("decayed attention limits") {
  Rng rng(42);
  int d = 4;
  auto base = random_attention(rng, d);
  models::DecayedAttentionParams p;
  p.w_v = base.w_v;
  p.w_k = base.w_k;
  p.w_q = base.w_q;
  p.b_v.assign(d, 0.0);
  p.b_k.assign(d, 0.0);
  p.b_q.assign(d, 0.0);
  p.gamma.assign(d, 0.0);
  auto batch = random_batch(rng, 2, 6, d);
  auto dec = models::decayed_lsa_forward(p, batch);
  auto plain = models::lsa_forward(base, batch);
  CHECK(dec.max_abs_diff(plain) < 1e-12);

  // gamma = 1: no memory of earlier outer products
  p.gamma.assign(d, 1.0);
  auto m1 = models::decayed_lsa_forward(p, batch);
  auto batch2 = batch;
  for (int j = 0; j < d; ++j) batch2.input_at(0, 0)[j] *= -2.0;
  auto m2 = models::decayed_lsa_forward(p, batch2);
  for (int i = 0; i < d; ++i)
    CHECK(m1.at(0, 5)[i] == doctest::Approx(m2.at(0, 5)[i]).epsilon(1e-13));
}

TEST_CASE("causality under randomized perturbation") {
  Rng rng(43);
  auto batch = random_batch(rng, 1, 6, 3, 3);
  int s = 4;  // perturb x_s, outputs before s must not move
  auto perturbed = batch;
  for (int j = 0; j < 3; ++j) perturbed.input_at(0, s)[j] += rng.normal();

  std::vector<models::ModelRef> zoo;
  zoo.push_back(random_attention(rng, 3));
  zoo.push_back(random_gated_rnn(rng, 3, 5, 4, 3));
  zoo.push_back(random_side_gated(rng, 3, 5, 3));
  zoo.push_back(random_dense_rnn(rng, 3, 5, 4, 3));
  zoo.push_back(random_lstm(rng, 3, 4, 2, 3));
  zoo.push_back(random_gru(rng, 3, 4, 2, 3));
  zoo.push_back(random_lru(rng, 3, 3, 1, 3, models::LruPostBlock::kGluOut));
  for (const auto& m : zoo) {
    auto a = models::forward(m, batch);
    auto b = models::forward(m, perturbed);
    for (int t = 0; t < s; ++t)
      for (int i = 0; i < 3; ++i)
        CHECK(a.at(0, t)[i] == doctest::Approx(b.at(0, t)[i]).epsilon(1e-14));
  }
}

TEST_CASE("homogeneity: attention cubic, gated rnn quartic") {
  Rng rng(44);
  auto att = random_attention(rng, 3);
  auto batch = random_batch(rng, 1, 1, 3);
  auto scaled = batch;
  double s = 1.7;
  for (double& v : scaled.inputs) v *= s;
  auto y1 = models::lsa_forward(att, batch);
  auto y2 = models::lsa_forward(att, scaled);
  for (size_t i = 0; i < y1.values.size(); ++i)
    CHECK(y2.values[i] == doctest::Approx(std::pow(s, 3) * y1.values[i]).epsilon(1e-10));

  auto rnn = random_gated_rnn(rng, 3, 5, 4, 3);
  auto r1 = models::gated_rnn_forward(rnn, batch).outputs;
  auto r2 = models::gated_rnn_forward(rnn, scaled).outputs;
  for (size_t i = 0; i < r1.values.size(); ++i)
    CHECK(r2.values[i] == doctest::Approx(std::pow(s, 4) * r1.values[i]).epsilon(1e-10));
}

TEST_CASE("state overflow raises a timestep-tagged error") {
  models::DenseGatedRnnParams p;
  p.w_m_in = Matrix{{1.0}};
  p.w_x_in = Matrix{{1.0}};
  p.a_rec = Matrix{{40.0}};
  p.w_m_out = Matrix{{1.0}};
  p.w_x_out = Matrix{{1.0}};
  p.d_readout = Matrix{{1.0}};
  SequenceBatch batch(1, 64, 1, 1);
  for (int t = 0; t < 64; ++t) batch.input_at(0, t)[0] = 2.0;
  CHECK_THROWS_AS(models::dense_gated_rnn_forward(p, batch), DivergenceError);
}

TEST_CASE("attention fingerprint: hand expansion at d=2 and pure degree 3") {
  models::AttentionParams p;
  p.w_v = Matrix::identity(2);
  p.w_k = Matrix::identity(2);
  p.w_q = Matrix::identity(2);
  auto fp = models::attention_fingerprint(p);
  REQUIRE(fp.size() == 2);
  // y_i = x_i (x_1^2 + x_2^2)
  CHECK(fp.components[0].coefficient({3, 0}) == doctest::Approx(1.0));
  CHECK(fp.components[0].coefficient({1, 2}) == doctest::Approx(1.0));
  CHECK(fp.components[0].terms().size() == 2);
  CHECK(fp.components[1].coefficient({0, 3}) == doctest::Approx(1.0));
  CHECK(fp.components[1].coefficient({2, 1}) == doctest::Approx(1.0));

  Rng rng(45);
  auto pr = random_attention(rng, 3);
  auto fpr = models::attention_fingerprint(pr);
  for (const auto& comp : fpr.components)
    for (const auto& [e, c] : comp.terms())
      CHECK(e[0] + e[1] + e[2] == 3);
}

TEST_CASE("fingerprint agrees with forward evaluation on single tokens") {
  Rng rng(46);
  auto p = random_gated_rnn(rng, 4, 6, 5, 3);
  auto fp = models::gated_rnn_fingerprint(p);
  auto batch = random_batch(rng, 1, 1, 4, 3);
  auto out = models::gated_rnn_forward(p, batch).outputs;
  std::vector<double> x(batch.input_at(0, 0), batch.input_at(0, 0) + 4);
  for (int i = 0; i < 3; ++i)
    CHECK(out.at(0, 0)[i] == doctest::Approx(fp.components[i].eval(x)).epsilon(1e-10));

  auto ps = random_side_gated(rng, 4, 6, 3);
  auto fps = models::side_gated_fingerprint(ps);
  auto outs = models::side_gated_rnn_forward(ps, batch).outputs;
  for (int i = 0; i < 3; ++i)
    CHECK(outs.at(0, 0)[i] == doctest::Approx(fps.components[i].eval(x)).epsilon(1e-10));
}

TEST_CASE("fingerprint rejects non-polynomial architectures") {
  Rng rng(47);
  models::ModelRef lstm = random_lstm(rng, 3, 4, 1, 3);
  CHECK_THROWS_AS(models::instantaneous_fingerprint(lstm), Error);
}

TEST_CASE("glu doubling trick approaches the bilinear gate at rate ~1") {
  // Doubled GLU output neurons around a biased operating point; the
  // combiner subtracts the baseline half and rescales. Error is O(eps).
  Rng rng(48);
  const int w = 3;  // two signal inputs + constant channel
  std::vector<double> wm = {0.7, -0.4, 0.0};
  std::vector<double> wx = {-0.3, 0.9, 0.0};
  const double bias = 1.0;
  const double sig1 = 1.0 / (1.0 + std::exp(-1.0));
  const double dsig1 = sig1 * (1.0 - sig1);

  std::vector<double> epses = {1e-1, 1e-2, 1e-3, 1e-4};
  std::vector<double> errs;
  for (double eps : epses) {
    models::LruParams p;
    p.post = models::LruPostBlock::kGluOut;
    p.embed = Matrix::identity(w);
    models::LruLayer L;
    L.nu_log = {std::log(1.0)};
    L.theta_log = {-40.0};
    L.gamma_log = {-40.0};  // recurrent path contributes ~0
    L.b_in = num::CMatrix(1, w);
    L.c_out = num::CMatrix(w, 1);
    L.d_skip = Matrix::identity(w);  // ytilde = x
    // doubled neurons: rows 0 uses (eps*wm + bias on constant), row 1 the
    // bias alone; both share wx.
    L.wm_out = Matrix(2, w);
    L.wx_out = Matrix(2, w);
    for (int j = 0; j < w; ++j) {
      L.wm_out(0, j) = eps * wm[j];
      L.wx_out(0, j) = wx[j];
      L.wx_out(1, j) = wx[j];
    }
    L.wm_out(0, 2) += bias;
    L.wm_out(1, 2) = bias;
    p.layers.push_back(L);
    p.readout = Matrix(1, 2);
    p.readout(0, 0) = 1.0 / (dsig1 * eps);
    p.readout(0, 1) = -1.0 / (dsig1 * eps);

    double max_err = 0.0;
    for (int rep = 0; rep < 64; ++rep) {
      models::SequenceBatch batch(1, 1, w, 1);
      batch.input_at(0, 0)[0] = rng.uniform(-1, 1);
      batch.input_at(0, 0)[1] = rng.uniform(-1, 1);
      batch.input_at(0, 0)[2] = 1.0;
      auto out = models::lru_forward(p, batch);
      const double* x = batch.input_at(0, 0);
      double target = (wm[0] * x[0] + wm[1] * x[1]) * (wx[0] * x[0] + wx[1] * x[1]);
      max_err = std::max(max_err, std::abs(out.at(0, 0)[0] - target));
    }
    errs.push_back(max_err);
  }
  // log-log slope over the sweep
  double n = epses.size(), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < epses.size(); ++i) {
    double lx = std::log10(epses[i]), ly = std::log10(errs[i]);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("checkpoint round trip is bit exact for every architecture") {
  Rng rng(49);
  std::vector<models::ModelRef> zoo;
  zoo.push_back(random_attention(rng, 3));
  {
    models::DecayedAttentionParams p;
    auto base = random_attention(rng, 3);
    p.w_v = base.w_v;
    p.w_k = base.w_k;
    p.w_q = base.w_q;
    p.b_v = {0.1, -0.2, 0.3};
    p.b_k = {1.0, 1.0, 1.0};
    p.b_q = {0.5, 0.0, -0.5};
    p.gamma = {0.0, 0.5, 1.0};
    zoo.push_back(p);
  }
  zoo.push_back(random_gated_rnn(rng, 3, 5, 4, 3));
  zoo.push_back(random_side_gated(rng, 3, 5, 3));
  zoo.push_back(random_dense_rnn(rng, 3, 5, 4, 3));
  zoo.push_back(random_lstm(rng, 3, 4, 2, 3, ActivationMode::kLinearized));
  zoo.push_back(random_gru(rng, 3, 4, 1, 3));
  zoo.push_back(random_lru(rng, 3, 3, 2, 3, models::LruPostBlock::kGluInOut));

  Rng drng(50);
  auto batch = random_batch(drng, 1, 3, 3, 3);
  for (const auto& m : zoo) {
    models::CheckpointMeta meta{1234, "2026-01-01T00:00:00Z"};
    std::string text = models::checkpoint_to_json(m, meta);
    auto loaded = models::checkpoint_from_json(text);
    CHECK(loaded.meta.seed == 1234);
    CHECK(models::arch_name(loaded.model) == models::arch_name(m));
    auto a = models::forward(m, batch);
    auto b = models::forward(loaded.model, batch);
    CHECK(a.max_abs_diff(b) == 0.0);  // bit-exact params => bit-exact outputs
  }
}

TEST_CASE("constant input augmentation is explicit") {
  Rng rng(51);
  auto batch = random_batch(rng, 2, 3, 4, 2);
  auto aug = batch.with_constant_input();
  CHECK(aug.d_in == 5);
  for (int b = 0; b < 2; ++b)
    for (int t = 0; t < 3; ++t) {
      CHECK(aug.input_at(b, t)[4] == 1.0);
      for (int j = 0; j < 4; ++j) CHECK(aug.input_at(b, t)[j] == batch.input_at(b, t)[j]);
    }
}
