#include "linattn/compiler/compile.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "linattn/models/forward.hpp"
#include "linattn/num/linalg.hpp"
#include "linattn/num/rng.hpp"

namespace linattn::compiler {

using num::Matrix;

namespace {

// Saturation surrogates for gates requested at sigma(+-inf).
constexpr double kSatBiasLinearized = 50.0;  // hard-clamped to exactly 1/0
constexpr double kSatBiasStandard = 30.0;    // sigma(30) ~= 1 - 1e-13

void copy_row(Matrix& dst, int dst_row, const Matrix& src, int src_row, int count) {
  for (int j = 0; j < count; ++j) dst(dst_row, j) = src(src_row, j);
}

// Readout pattern of the flattened key-value layout: output i sums gated
// units p with p / d == i.
Matrix kv_sum_readout(int d) {
  Matrix out(d, d * d);
  for (int p = 0; p < d * d; ++p) out(p / d, p) = 1.0;
  return out;
}

}  // namespace

GatedRnnParams compile_full(const AttentionParams& p) {
  p.check();
  const int d = p.dim();
  const int n_kv = d * d;
  const int n = n_kv + d;
  GatedRnnParams g;
  g.lambda_mode = models::LambdaMode::kDirect01;
  g.lambda_raw.assign(n, 0.0);
  g.w_x_in = Matrix(n, d + 1);
  g.w_m_in = Matrix(n, d + 1);
  for (int pidx = 0; pidx < n_kv; ++pidx) {
    copy_row(g.w_x_in, pidx, p.w_v, pidx / d, d);  // value row
    copy_row(g.w_m_in, pidx, p.w_k, pidx % d, d);  // key row
    g.lambda_raw[pidx] = 1.0;
  }
  for (int i = 0; i < d; ++i) {
    copy_row(g.w_x_in, n_kv + i, p.w_q, i, d);  // query row
    g.w_m_in(n_kv + i, d) = 1.0;                // gate on the constant channel
    g.lambda_raw[n_kv + i] = 0.0;
  }
  g.w_x_out = Matrix(n_kv, n);
  g.w_m_out = Matrix(n_kv, n);
  for (int pidx = 0; pidx < n_kv; ++pidx) {
    g.w_x_out(pidx, pidx) = 1.0;                 // the key-value entry
    g.w_m_out(pidx, n_kv + (pidx % d)) = 1.0;    // the matching query
  }
  g.d_readout = kv_sum_readout(d);
  return g;
}

GatedRnnParams compile_compact(const AttentionParams& p) {
  p.check();
  const int d = p.dim();
  Matrix w_q_eff;
  try {
    auto inv = num::inverse(p.w_v);
    // keys := values; queries := W_v^{-T} W_k^T W_q keeps W_k^T W_q fixed.
    w_q_eff = num::matmul(inv.inv.transposed(),
                          num::matmul(p.w_k.transposed(), p.w_q));
  } catch (const SingularMatrixError&) {
    throw SingularMatrixError(
        "compile_compact: value matrix is singular to tolerance; use compile_full");
  }

  const int n_kv = d * (d + 1) / 2;
  const int n = n_kv + d;
  // Upper-triangle storage index for the symmetric key-values.
  auto store = [d](int i, int j) {
    if (i > j) std::swap(i, j);
    return i * d - i * (i - 1) / 2 + (j - i);
  };

  GatedRnnParams g;
  g.lambda_mode = models::LambdaMode::kDirect01;
  g.lambda_raw.assign(n, 0.0);
  g.w_x_in = Matrix(n, d + 1);
  g.w_m_in = Matrix(n, d + 1);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      int s = store(i, j);
      copy_row(g.w_x_in, s, p.w_v, i, d);
      copy_row(g.w_m_in, s, p.w_v, j, d);  // key row = value row
      g.lambda_raw[s] = 1.0;
    }
  for (int i = 0; i < d; ++i) {
    copy_row(g.w_x_in, n_kv + i, w_q_eff, i, d);
    g.w_m_in(n_kv + i, d) = 1.0;
    g.lambda_raw[n_kv + i] = 0.0;
  }
  // One gated unit per ordered pair (i,j); off-diagonal stored products are
  // consumed twice, once for each output row they serve.
  const int m = d * d;
  g.w_x_out = Matrix(m, n);
  g.w_m_out = Matrix(m, n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      int row = i * d + j;
      g.w_x_out(row, store(i, j)) = 1.0;
      g.w_m_out(row, n_kv + j) = 1.0;
    }
  g.d_readout = kv_sum_readout(d);
  return g;
}

GatedRnnParams compile_low_rank(const AttentionParams& p, double rank_tol) {
  p.check();
  const int d = p.dim();
  auto sv = num::svd(p.w_v);
  auto skq = num::svd(num::matmul(p.w_k.transposed(), p.w_q));
  auto effective_rank = [rank_tol](const num::SvdResult& s) {
    if (s.s.empty() || s.s[0] <= 0.0) return 0;
    int r = 0;
    for (double v : s.s)
      if (v > rank_tol * s.s[0]) ++r;
    return r;
  };
  const int r_v = effective_rank(sv);
  const int r_kq = effective_rank(skq);

  // value_eff = (S_v V_v^T)[0:r_v], key_eff = (S_kq U_kq^T)[0:r_kq],
  // query_eff = (V_kq^T)[0:r_kq]; the readout restores the U_v basis.
  Matrix value_eff(r_v, d), key_eff(r_kq, d), query_eff(r_kq, d);
  for (int a = 0; a < r_v; ++a)
    for (int j = 0; j < d; ++j) value_eff(a, j) = sv.s[a] * sv.v(j, a);
  for (int b = 0; b < r_kq; ++b)
    for (int j = 0; j < d; ++j) {
      key_eff(b, j) = skq.s[b] * skq.u(j, b);
      query_eff(b, j) = skq.v(j, b);
    }

  const int n_kv = r_v * r_kq;
  const int n = n_kv + r_kq;
  GatedRnnParams g;
  g.lambda_mode = models::LambdaMode::kDirect01;
  g.lambda_raw.assign(n, 0.0);
  g.w_x_in = Matrix(n, d + 1);
  g.w_m_in = Matrix(n, d + 1);
  for (int a = 0; a < r_v; ++a)
    for (int b = 0; b < r_kq; ++b) {
      int s = a * r_kq + b;
      copy_row(g.w_x_in, s, value_eff, a, d);
      copy_row(g.w_m_in, s, key_eff, b, d);
      g.lambda_raw[s] = 1.0;
    }
  for (int b = 0; b < r_kq; ++b) {
    copy_row(g.w_x_in, n_kv + b, query_eff, b, d);
    g.w_m_in(n_kv + b, d) = 1.0;
  }
  g.w_x_out = Matrix(n_kv, n);
  g.w_m_out = Matrix(n_kv, n);
  for (int s = 0; s < n_kv; ++s) {
    g.w_x_out(s, s) = 1.0;
    g.w_m_out(s, n_kv + (s % std::max(1, r_kq))) = 1.0;
  }
  g.d_readout = Matrix(d, n_kv);
  for (int i = 0; i < d; ++i)
    for (int a = 0; a < r_v; ++a)
      for (int b = 0; b < r_kq; ++b) g.d_readout(i, a * r_kq + b) = sv.u(i, a);
  return g;
}

SideGatedRnnParams compile_side(const AttentionParams& p) {
  p.check();
  const int d = p.dim();
  const int n = d * d;
  SideGatedRnnParams g;
  g.lambda_mode = models::LambdaMode::kDirect01;
  g.lambda_raw.assign(n, 1.0);
  g.w_x_in = Matrix(n, d);
  g.w_m_in = Matrix(n, d);
  g.w_side = Matrix(n, d);
  for (int pidx = 0; pidx < n; ++pidx) {
    copy_row(g.w_x_in, pidx, p.w_v, pidx / d, d);
    copy_row(g.w_m_in, pidx, p.w_k, pidx % d, d);
    copy_row(g.w_side, pidx, p.w_q, pidx % d, d);
  }
  g.d_readout = kv_sum_readout(d);
  return g;
}

namespace {

// Fig-1-style flattening of the attention matrices into a d^2-cell layer:
// cell p pairs value row p/d with key row p%d and is queried by row p%d.
void fill_attention_gates(const AttentionParams& p, Matrix& u_c, Matrix& u_g, Matrix& u_o,
                          int row_offset, double scale) {
  const int d = p.dim();
  for (int pidx = 0; pidx < d * d; ++pidx) {
    for (int j = 0; j < d; ++j) {
      u_c(row_offset + pidx, j) = scale * p.w_k(pidx % d, j);
      u_g(row_offset + pidx, j) = scale * p.w_v(pidx / d, j);
      u_o(row_offset + pidx, j) = scale * p.w_q(pidx % d, j);
    }
  }
}

}  // namespace

LstmParams compile_lstm_attention(const AttentionParams& p, const LstmCompileOptions& opts) {
  p.check();
  const int d = p.dim();
  const int cells = d * d;
  LstmParams out;
  out.mode = opts.mode;
  out.embed = Matrix::identity(d);

  if (opts.mode == models::ActivationMode::kLinearized) {
    models::LstmLayer L;
    L.u_f = Matrix(cells, d);
    L.v_f = Matrix(cells, cells);
    L.b_f.assign(cells, kSatBiasLinearized);  // f = 1
    L.u_c = Matrix(cells, d);
    L.v_c = Matrix(cells, cells);
    L.b_c.assign(cells, 0.0);
    L.u_g = Matrix(cells, d);
    L.v_g = Matrix(cells, cells);
    L.b_g.assign(cells, 0.0);
    L.u_o = Matrix(cells, d);
    L.v_o = Matrix(cells, cells);
    L.b_o.assign(cells, 0.0);
    fill_attention_gates(p, L.u_c, L.u_g, L.u_o, 0, 1.0);
    out.layers.push_back(std::move(L));
    out.readout = kv_sum_readout(d);
    return out;
  }

  // Standard mode: four cell groups around a biased gate operating point.
  // Groups: (g active | baseline) x (o active | baseline); the readout takes
  // the +--+ combination, which isolates the bilinear term up to O(eps).
  const double eps = opts.epsilon;
  const double bias = 1.0;
  const double s1 = 1.0 / (1.0 + std::exp(-bias));
  const double slope = s1 * (1.0 - s1);  // sigma'(bias)
  const int total = 4 * cells;

  models::LstmLayer L;
  L.u_f = Matrix(total, d);
  L.v_f = Matrix(total, total);
  L.b_f.assign(total, kSatBiasStandard);
  L.u_c = Matrix(total, d);
  L.v_c = Matrix(total, total);
  L.b_c.assign(total, 0.0);
  L.u_g = Matrix(total, d);
  L.v_g = Matrix(total, total);
  L.b_g.assign(total, bias);
  L.u_o = Matrix(total, d);
  L.v_o = Matrix(total, total);
  L.b_o.assign(total, bias);

  for (int group = 0; group < 4; ++group) {
    const int off = group * cells;
    const bool g_active = group == 0 || group == 2;
    const bool o_active = group == 0 || group == 1;
    for (int pidx = 0; pidx < cells; ++pidx) {
      for (int j = 0; j < d; ++j) {
        L.u_c(off + pidx, j) = eps * p.w_k(pidx % d, j);
        if (g_active) L.u_g(off + pidx, j) = eps * p.w_v(pidx / d, j);
        if (o_active) L.u_o(off + pidx, j) = eps * p.w_q(pidx % d, j);
      }
    }
  }
  out.layers.push_back(std::move(L));

  Matrix base = kv_sum_readout(d);
  out.readout = Matrix(d, total);
  const double rescale = 1.0 / (slope * slope * eps * eps * eps);
  const double sign[4] = {+1.0, -1.0, -1.0, +1.0};
  for (int group = 0; group < 4; ++group)
    for (int i = 0; i < d; ++i)
      for (int pidx = 0; pidx < cells; ++pidx)
        out.readout(i, group * cells + pidx) = sign[group] * rescale * base(i, pidx);
  return out;
}

LstmParams compile_lstm_gated_rnn(const GatedRnnParams& p) {
  p.check();
  const int n = p.hidden(), m = p.gated_outputs(), din = p.d_in();
  auto lam = p.lambda();
  LstmParams out;
  out.mode = models::ActivationMode::kLinearized;
  out.embed = Matrix::identity(din);

  models::LstmLayer l1;
  l1.u_f = Matrix(n, din);
  l1.v_f = Matrix(n, n);
  l1.b_f.resize(n);
  for (int i = 0; i < n; ++i) {
    if (lam[i] >= 1.0)
      l1.b_f[i] = kSatBiasLinearized;
    else if (lam[i] <= 0.0)
      l1.b_f[i] = -kSatBiasLinearized;
    else
      l1.b_f[i] = std::log(lam[i] / (1.0 - lam[i]));  // sigma^-1(lambda)
  }
  l1.u_c = p.w_m_in;
  l1.v_c = Matrix(n, n);
  l1.b_c.assign(n, 0.0);
  l1.u_g = p.w_x_in;
  l1.v_g = Matrix(n, n);
  l1.b_g.assign(n, 0.0);
  l1.u_o = Matrix(n, din);
  l1.v_o = Matrix(n, n);
  l1.b_o.assign(n, 1.0);  // o = 1 through the identity activation
  out.layers.push_back(std::move(l1));

  models::LstmLayer l2;
  l2.u_f = Matrix(m, n);
  l2.v_f = Matrix(m, m);
  l2.b_f.assign(m, -kSatBiasLinearized);  // f = 0: fresh output gate each step
  l2.u_c = p.w_m_out;
  l2.v_c = Matrix(m, m);
  l2.b_c.assign(m, 0.0);
  l2.u_g = p.w_x_out;
  l2.v_g = Matrix(m, m);
  l2.b_g.assign(m, 0.0);
  l2.u_o = Matrix(m, n);
  l2.v_o = Matrix(m, m);
  l2.b_o.assign(m, 1.0);
  out.layers.push_back(std::move(l2));

  out.readout = p.d_readout;
  return out;
}

DecayedAttentionParams compile_recurrence_to_decayed_lsa(const std::vector<double>& lambda) {
  const int d = static_cast<int>(lambda.size());
  for (double l : lambda)
    if (!(l >= 0.0 && l <= 1.0))
      throw Error("compile_recurrence_to_decayed_lsa: lambda entries must lie in [0,1]");
  DecayedAttentionParams p;
  p.w_v = Matrix::identity(d);
  p.w_k = Matrix(d, d);
  p.w_q = Matrix(d, d);
  p.b_v.assign(d, 0.0);
  p.b_k.assign(d, 1.0);
  p.b_q.assign(d, 1.0 / d);
  p.gamma.resize(d);
  for (int i = 0; i < d; ++i) p.gamma[i] = 1.0 - lambda[i];
  return p;
}

ConstructionReport verify_equivalence(const ModelRef& model_a, const ModelRef& model_b, int d,
                                      int seq_len, int n_seq, uint64_t seed) {
  num::Rng rng = num::Rng(seed).split("verify_equivalence");
  models::SequenceBatch raw(n_seq, seq_len, d, d);
  for (double& v : raw.inputs) v = rng.normal();
  for (double& v : raw.mask) v = 1.0;
  auto batch_for = [&](const ModelRef& m) {
    int din = models::model_d_in(m);
    if (din == d) return raw;
    if (din == d + 1) return raw.with_constant_input();
    throw ShapeError("verify_equivalence: model input width is neither d nor d+1");
  };
  auto ya = models::forward(model_a, batch_for(model_a));
  auto yb = models::forward(model_b, batch_for(model_b));
  if (ya.values.size() != yb.values.size())
    throw ShapeError("verify_equivalence: output shapes disagree");

  ConstructionReport rep;
  rep.source_arch = models::arch_name(model_a);
  rep.target_arch = models::arch_name(model_b);
  rep.input_width = models::model_d_in(model_b);
  rep.verification_seed = seed;
  rep.seq_len = seq_len;
  rep.n_seq = n_seq;
  if (const auto* g = std::get_if<GatedRnnParams>(&model_b))
    rep.hidden_count = g->hidden();
  else if (const auto* s = std::get_if<SideGatedRnnParams>(&model_b))
    rep.hidden_count = s->hidden();
  else if (const auto* l = std::get_if<LstmParams>(&model_b))
    for (const auto& layer : l->layers) rep.hidden_count += layer.hidden();

  for (size_t i = 0; i < ya.values.size(); ++i) {
    double dev = std::abs(ya.values[i] - yb.values[i]);
    rep.max_abs_deviation = std::max(rep.max_abs_deviation, dev);
    double denom = std::max(std::abs(ya.values[i]), std::abs(yb.values[i]));
    if (denom > 1e-12)
      rep.max_rel_deviation = std::max(rep.max_rel_deviation, dev / denom);
  }
  return rep;
}

std::string ConstructionReport::to_json() const {
  nlohmann::json j;
  j["source_arch"] = source_arch;
  j["target_arch"] = target_arch;
  j["hidden_count"] = hidden_count;
  j["input_width"] = input_width;
  j["max_abs_deviation"] = max_abs_deviation;
  j["max_rel_deviation"] = max_rel_deviation;
  j["verification_seed"] = verification_seed;
  j["seq_len"] = seq_len;
  j["n_seq"] = n_seq;
  return j.dump(2);
}

}  // namespace linattn::compiler
