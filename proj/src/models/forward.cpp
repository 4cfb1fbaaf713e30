#include "linattn/models/forward.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "linattn/num/linalg.hpp"

namespace linattn::models {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// Used for the forget gate in linearized mode: saturated requests become the
// literal constants 0/1.
double sat_sigmoid(double z) {
  if (z >= 37.0) return 1.0;
  if (z <= -37.0) return 0.0;
  return sigmoid(z);
}

void check_state(const std::vector<double>& h, int t, const char* arch) {
  for (double v : h) {
    if (!std::isfinite(v) || std::abs(v) > kStateOverflow)
      throw DivergenceError(std::string(arch) + ": state overflow at timestep " +
                                std::to_string(t),
                            t);
  }
}

std::vector<double> affine(const num::Matrix& w, const double* x,
                           const std::vector<double>* bias = nullptr) {
  std::vector<double> y(w.rows, 0.0);
  for (int i = 0; i < w.rows; ++i) {
    const double* wi = w.row_ptr(i);
    double s = bias ? (*bias)[i] : 0.0;
    for (int j = 0; j < w.cols; ++j) s += wi[j] * x[j];
    y[i] = s;
  }
  return y;
}

}  // namespace

SequenceBatch SequenceBatch::with_constant_input() const {
  SequenceBatch out(batch, seq_len, d_in + 1, d_out);
  out.targets = targets;
  out.mask = mask;
  out.class_targets = class_targets;
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < seq_len; ++t) {
      const double* src = input_at(b, t);
      double* dst = out.input_at(b, t);
      std::copy(src, src + d_in, dst);
      dst[d_in] = 1.0;
    }
  return out;
}

double Outputs::max_abs_diff(const Outputs& other) const {
  if (values.size() != other.values.size())
    throw ShapeError("Outputs::max_abs_diff: shapes disagree");
  double m = 0.0;
  for (size_t i = 0; i < values.size(); ++i)
    m = std::max(m, std::abs(values[i] - other.values[i]));
  return m;
}

Outputs lsa_forward(const AttentionParams& p, const SequenceBatch& batch) {
  p.check();
  const int d = p.dim();
  if (batch.d_in != d) throw ShapeError("lsa_forward: input width != d");
  Outputs out(batch.batch, batch.seq_len, d);
  std::vector<double> wff(static_cast<size_t>(d) * d);
  for (int b = 0; b < batch.batch; ++b) {
    std::fill(wff.begin(), wff.end(), 0.0);
    for (int t = 0; t < batch.seq_len; ++t) {
      const double* x = batch.input_at(b, t);
      auto v = affine(p.w_v, x);
      auto k = affine(p.w_k, x);
      auto q = affine(p.w_q, x);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) wff[static_cast<size_t>(i) * d + j] += v[i] * k[j];
      double* y = out.at(b, t);
      for (int i = 0; i < d; ++i) {
        double s = 0.0;
        const double* wi = wff.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) s += wi[j] * q[j];
        y[i] = s;
      }
    }
  }
  return out;
}

GatedRnnForwardResult gated_rnn_forward(const GatedRnnParams& p, const SequenceBatch& batch) {
  p.check();
  if (batch.d_in != p.d_in()) throw ShapeError("gated_rnn_forward: input width mismatch");
  const int n = p.hidden(), m = p.gated_outputs(), dout = p.d_out();
  auto lam = p.lambda();
  GatedRnnForwardResult res;
  res.outputs = Outputs(batch.batch, batch.seq_len, dout);
  res.hidden = HiddenTrace(batch.batch, batch.seq_len, n);
  std::vector<double> h(n);
  for (int b = 0; b < batch.batch; ++b) {
    std::fill(h.begin(), h.end(), 0.0);
    for (int t = 0; t < batch.seq_len; ++t) {
      const double* x = batch.input_at(b, t);
      auto gm = affine(p.w_m_in, x);
      auto gx = affine(p.w_x_in, x);
      for (int i = 0; i < n; ++i) h[i] = lam[i] * h[i] + gm[i] * gx[i];
      check_state(h, t, "gated_rnn_forward");
      std::copy(h.begin(), h.end(), res.hidden.at(b, t));
      auto om = affine(p.w_m_out, h.data());
      auto ox = affine(p.w_x_out, h.data());
      for (int i = 0; i < m; ++i) om[i] *= ox[i];
      double* y = res.outputs.at(b, t);
      for (int i = 0; i < dout; ++i) {
        double s = 0.0;
        const double* di = p.d_readout.row_ptr(i);
        for (int j = 0; j < m; ++j) s += di[j] * om[j];
        y[i] = s;
      }
    }
  }
  return res;
}

SideGatedForwardResult side_gated_rnn_forward(const SideGatedRnnParams& p,
                                              const SequenceBatch& batch) {
  p.check();
  if (batch.d_in != p.d_in()) throw ShapeError("side_gated_rnn_forward: input width mismatch");
  const int n = p.hidden(), dout = p.d_out();
  auto lam = p.lambda();
  SideGatedForwardResult res;
  res.outputs = Outputs(batch.batch, batch.seq_len, dout);
  res.hidden = HiddenTrace(batch.batch, batch.seq_len, n);
  std::vector<double> h(n);
  for (int b = 0; b < batch.batch; ++b) {
    std::fill(h.begin(), h.end(), 0.0);
    for (int t = 0; t < batch.seq_len; ++t) {
      const double* x = batch.input_at(b, t);
      auto gm = affine(p.w_m_in, x);
      auto gx = affine(p.w_x_in, x);
      for (int i = 0; i < n; ++i) h[i] = lam[i] * h[i] + gm[i] * gx[i];
      check_state(h, t, "side_gated_rnn_forward");
      std::copy(h.begin(), h.end(), res.hidden.at(b, t));
      auto side = affine(p.w_side, x);
      for (int i = 0; i < n; ++i) side[i] *= h[i];
      double* y = res.outputs.at(b, t);
      for (int i = 0; i < dout; ++i) {
        double s = 0.0;
        const double* di = p.d_readout.row_ptr(i);
        for (int j = 0; j < n; ++j) s += di[j] * side[j];
        y[i] = s;
      }
    }
  }
  return res;
}

Outputs dense_gated_rnn_forward(const DenseGatedRnnParams& p, const SequenceBatch& batch) {
  p.check();
  if (batch.d_in != p.d_in()) throw ShapeError("dense_gated_rnn_forward: input width mismatch");
  const int n = p.hidden(), m = p.w_m_out.rows, dout = p.d_out();
  Outputs out(batch.batch, batch.seq_len, dout);
  std::vector<double> h(n), hn(n);
  for (int b = 0; b < batch.batch; ++b) {
    std::fill(h.begin(), h.end(), 0.0);
    for (int t = 0; t < batch.seq_len; ++t) {
      const double* x = batch.input_at(b, t);
      auto gm = affine(p.w_m_in, x);
      auto gx = affine(p.w_x_in, x);
      for (int i = 0; i < n; ++i) {
        const double* ai = p.a_rec.row_ptr(i);
        double s = gm[i] * gx[i];
        for (int j = 0; j < n; ++j) s += ai[j] * h[j];
        hn[i] = s;
      }
      std::swap(h, hn);
      check_state(h, t, "dense_gated_rnn_forward");
      auto om = affine(p.w_m_out, h.data());
      auto ox = affine(p.w_x_out, h.data());
      for (int i = 0; i < m; ++i) om[i] *= ox[i];
      double* y = out.at(b, t);
      for (int i = 0; i < dout; ++i) {
        double s = 0.0;
        const double* di = p.d_readout.row_ptr(i);
        for (int j = 0; j < m; ++j) s += di[j] * om[j];
        y[i] = s;
      }
    }
  }
  return out;
}

Outputs lstm_forward(const LstmParams& p, const SequenceBatch& batch) {
  p.check();
  if (batch.d_in != p.d_in()) throw ShapeError("lstm_forward: input width mismatch");
  const bool lin = p.mode == ActivationMode::kLinearized;
  const int dout = p.d_out();
  Outputs out(batch.batch, batch.seq_len, dout);
  const int nl = static_cast<int>(p.layers.size());
  for (int b = 0; b < batch.batch; ++b) {
    std::vector<std::vector<double>> h(nl), c(nl);
    for (int l = 0; l < nl; ++l) {
      h[l].assign(p.layers[l].hidden(), 0.0);
      c[l].assign(p.layers[l].hidden(), 0.0);
    }
    for (int t = 0; t < batch.seq_len; ++t) {
      std::vector<double> u = affine(p.embed, batch.input_at(b, t));
      for (int l = 0; l < nl; ++l) {
        const LstmLayer& ly = p.layers[l];
        const int nh = ly.hidden();
        auto zf = affine(ly.u_f, u.data(), &ly.b_f);
        auto zc = affine(ly.u_c, u.data(), &ly.b_c);
        auto zg = affine(ly.u_g, u.data(), &ly.b_g);
        auto zo = affine(ly.u_o, u.data(), &ly.b_o);
        for (int i = 0; i < nh; ++i) {
          const double* vf = ly.v_f.row_ptr(i);
          const double* vc = ly.v_c.row_ptr(i);
          const double* vg = ly.v_g.row_ptr(i);
          const double* vo = ly.v_o.row_ptr(i);
          for (int j = 0; j < nh; ++j) {
            double hj = h[l][j];
            zf[i] += vf[j] * hj;
            zc[i] += vc[j] * hj;
            zg[i] += vg[j] * hj;
            zo[i] += vo[j] * hj;
          }
        }
        for (int i = 0; i < nh; ++i) {
          double f = lin ? sat_sigmoid(zf[i]) : sigmoid(zf[i]);
          double cc = lin ? zc[i] : std::tanh(zc[i]);
          double g = lin ? zg[i] : sigmoid(zg[i]);
          double o = lin ? zo[i] : sigmoid(zo[i]);
          c[l][i] = f * c[l][i] + g * cc;
          h[l][i] = o * (lin ? c[l][i] : std::tanh(c[l][i]));
        }
        check_state(c[l], t, "lstm_forward");
        u = h[l];
      }
      double* y = out.at(b, t);
      for (int i = 0; i < dout; ++i) {
        double s = 0.0;
        const double* ri = p.readout.row_ptr(i);
        for (size_t j = 0; j < u.size(); ++j) s += ri[j] * u[j];
        y[i] = s;
      }
    }
  }
  return out;
}

Outputs gru_forward(const GruParams& p, const SequenceBatch& batch) {
  p.check();
  if (batch.d_in != p.d_in()) throw ShapeError("gru_forward: input width mismatch");
  const bool lin = p.mode == ActivationMode::kLinearized;
  const int dout = p.d_out();
  Outputs out(batch.batch, batch.seq_len, dout);
  const int nl = static_cast<int>(p.layers.size());
  for (int b = 0; b < batch.batch; ++b) {
    std::vector<std::vector<double>> h(nl);
    for (int l = 0; l < nl; ++l) h[l].assign(p.layers[l].hidden(), 0.0);
    for (int t = 0; t < batch.seq_len; ++t) {
      std::vector<double> u = affine(p.embed, batch.input_at(b, t));
      for (int l = 0; l < nl; ++l) {
        const GruLayer& ly = p.layers[l];
        const int nh = ly.hidden();
        auto zr = affine(ly.u_r, u.data(), &ly.b_r);
        auto zz = affine(ly.u_z, u.data(), &ly.b_z);
        for (int i = 0; i < nh; ++i) {
          const double* vr = ly.v_r.row_ptr(i);
          const double* vz = ly.v_z.row_ptr(i);
          for (int j = 0; j < nh; ++j) {
            zr[i] += vr[j] * h[l][j];
            zz[i] += vz[j] * h[l][j];
          }
        }
        std::vector<double> rh(nh);
        for (int i = 0; i < nh; ++i) rh[i] = sigmoid(zr[i]) * h[l][i];
        auto zh = affine(ly.u_h, u.data(), &ly.b_h);
        for (int i = 0; i < nh; ++i) {
          const double* vh = ly.v_h.row_ptr(i);
          for (int j = 0; j < nh; ++j) zh[i] += vh[j] * rh[j];
        }
        for (int i = 0; i < nh; ++i) {
          double z = sigmoid(zz[i]);
          double cand = lin ? zh[i] : std::tanh(zh[i]);
          h[l][i] = (1.0 - z) * h[l][i] + z * cand;
        }
        check_state(h[l], t, "gru_forward");
        u = h[l];
      }
      double* y = out.at(b, t);
      for (int i = 0; i < dout; ++i) {
        double s = 0.0;
        const double* ri = p.readout.row_ptr(i);
        for (size_t j = 0; j < u.size(); ++j) s += ri[j] * u[j];
        y[i] = s;
      }
    }
  }
  return out;
}

namespace {

std::vector<double> glu(const num::Matrix& wm, const num::Matrix& wx,
                        const std::vector<double>& x) {
  auto m = affine(wm, x.data());
  auto v = affine(wx, x.data());
  for (size_t i = 0; i < m.size(); ++i) v[i] *= sigmoid(m[i]);
  return v;
}

std::vector<double> mlp1(const num::Matrix& w1, const num::Matrix& w2,
                         const std::vector<double>& x) {
  auto hid = affine(w1, x.data());
  for (double& v : hid) v = std::tanh(v);
  return affine(w2, hid.data());
}

}  // namespace

Outputs lru_forward(const LruParams& p, const SequenceBatch& batch) {
  p.check();
  if (batch.d_in != p.d_in()) throw ShapeError("lru_forward: input width mismatch");
  const int dout = p.d_out();
  const bool in_gate = p.post != LruPostBlock::kGluOut;
  const bool mlp = p.post == LruPostBlock::kMlpInOut;
  Outputs out(batch.batch, batch.seq_len, dout);
  const int nl = static_cast<int>(p.layers.size());
  for (int b = 0; b < batch.batch; ++b) {
    std::vector<std::vector<std::complex<double>>> h(nl);
    for (int l = 0; l < nl; ++l) h[l].assign(p.layers[l].state_size(), {0.0, 0.0});
    for (int t = 0; t < batch.seq_len; ++t) {
      std::vector<double> u = affine(p.embed, batch.input_at(b, t));
      for (int l = 0; l < nl; ++l) {
        const LruLayer& ly = p.layers[l];
        const int n = ly.state_size();
        std::vector<double> v = u;
        if (in_gate)
          v = mlp ? mlp1(ly.mlp_w1_in, ly.mlp_w2_in, u) : glu(ly.wm_in, ly.wx_in, u);
        for (int i = 0; i < n; ++i) {
          double mag = std::exp(-std::exp(ly.nu_log[i]));
          double phase = std::exp(ly.theta_log[i]);
          std::complex<double> lam(mag * std::cos(phase), mag * std::sin(phase));
          std::complex<double> bu(0.0, 0.0);
          for (int j = 0; j < ly.b_in.cols; ++j) bu += ly.b_in(i, j) * v[j];
          h[l][i] = lam * h[l][i] + std::exp(ly.gamma_log[i]) * bu;
          double a = std::abs(h[l][i]);
          if (!std::isfinite(a) || a > kStateOverflow)
            throw DivergenceError("lru_forward: state overflow at timestep " + std::to_string(t),
                                  t);
        }
        const int mid = ly.c_out.rows;
        std::vector<double> ytilde(mid, 0.0);
        for (int i = 0; i < mid; ++i) {
          std::complex<double> s(0.0, 0.0);
          for (int j = 0; j < n; ++j) s += ly.c_out(i, j) * h[l][j];
          ytilde[i] = s.real();
        }
        auto skip = affine(ly.d_skip, v.data());
        for (int i = 0; i < mid; ++i) ytilde[i] += skip[i];
        u = mlp ? mlp1(ly.mlp_w1_out, ly.mlp_w2_out, ytilde)
                : glu(ly.wm_out, ly.wx_out, ytilde);
      }
      double* y = out.at(b, t);
      for (int i = 0; i < dout; ++i) {
        double s = 0.0;
        const double* ri = p.readout.row_ptr(i);
        for (size_t j = 0; j < u.size(); ++j) s += ri[j] * u[j];
        y[i] = s;
      }
    }
  }
  return out;
}

Outputs decayed_lsa_forward(const DecayedAttentionParams& p, const SequenceBatch& batch) {
  p.check();
  const int d = p.dim();
  if (batch.d_in != d) throw ShapeError("decayed_lsa_forward: input width != d");
  Outputs out(batch.batch, batch.seq_len, d);
  std::vector<double> wff(static_cast<size_t>(d) * d);
  for (int b = 0; b < batch.batch; ++b) {
    std::fill(wff.begin(), wff.end(), 0.0);
    for (int t = 0; t < batch.seq_len; ++t) {
      const double* x = batch.input_at(b, t);
      auto v = affine(p.w_v, x, &p.b_v);
      auto k = affine(p.w_k, x, &p.b_k);
      auto q = affine(p.w_q, x, &p.b_q);
      for (int i = 0; i < d; ++i) {
        double keep = 1.0 - p.gamma[i];
        double* wi = wff.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) wi[j] = keep * wi[j] + v[i] * k[j];
      }
      double* y = out.at(b, t);
      for (int i = 0; i < d; ++i) {
        double s = 0.0;
        const double* wi = wff.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) s += wi[j] * q[j];
        y[i] = s;
      }
    }
  }
  return out;
}

Outputs forward(const ModelRef& model, const SequenceBatch& batch) {
  struct Visitor {
    const SequenceBatch& b;
    Outputs operator()(const AttentionParams& p) { return lsa_forward(p, b); }
    Outputs operator()(const DecayedAttentionParams& p) { return decayed_lsa_forward(p, b); }
    Outputs operator()(const GatedRnnParams& p) { return gated_rnn_forward(p, b).outputs; }
    Outputs operator()(const SideGatedRnnParams& p) {
      return side_gated_rnn_forward(p, b).outputs;
    }
    Outputs operator()(const DenseGatedRnnParams& p) { return dense_gated_rnn_forward(p, b); }
    Outputs operator()(const LstmParams& p) { return lstm_forward(p, b); }
    Outputs operator()(const GruParams& p) { return gru_forward(p, b); }
    Outputs operator()(const LruParams& p) { return lru_forward(p, b); }
  };
  return std::visit(Visitor{batch}, model);
}

}  // namespace linattn::models
