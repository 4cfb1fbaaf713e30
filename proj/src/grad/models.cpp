#include "linattn/grad/models.hpp"

#include <cmath>

namespace linattn::grad {

using models::SequenceBatch;
using num::Matrix;
using num::Rng;

namespace {

Tensor gaussian(Rng& rng, std::vector<int> shape, double std) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, std);
  return t;
}

Tensor fan_in_init(Rng& rng, int rows, int cols) {
  return gaussian(rng, {rows, cols}, 1.0 / std::sqrt(static_cast<double>(cols)));
}

// nu_log grid so that lambda = exp(-exp(nu_log)) is log-spaced on
// [0.3, 0.999].
Tensor lambda_init(int n) {
  Tensor t({n});
  const double lo = std::log(0.3), hi = std::log(0.999);
  for (int i = 0; i < n; ++i) {
    double r = n > 1 ? static_cast<double>(i) / (n - 1) : 0.5;
    double lambda = std::exp(lo + r * (hi - lo));
    t.data[i] = std::log(-std::log(lambda));
  }
  return t;
}

void init_lstm_layer(ParamSet& p, Rng& rng, const std::string& prefix, int input, int hidden) {
  for (const char* gate : {"f", "c", "g", "o"}) {
    p.emplace_back(prefix + ".u_" + gate, fan_in_init(rng, hidden, input));
    p.emplace_back(prefix + ".v_" + gate, fan_in_init(rng, hidden, hidden));
    p.emplace_back(prefix + ".b_" + gate, Tensor({hidden}));
  }
}

void init_gru_layer(ParamSet& p, Rng& rng, const std::string& prefix, int input, int hidden) {
  for (const char* gate : {"r", "h", "z"}) {
    p.emplace_back(prefix + ".u_" + gate, fan_in_init(rng, hidden, input));
    p.emplace_back(prefix + ".v_" + gate, fan_in_init(rng, hidden, hidden));
    p.emplace_back(prefix + ".b_" + gate, Tensor({hidden}));
  }
}

void init_lru_layer(ParamSet& p, Rng& rng, const std::string& prefix, int width, int n,
                    const std::string& arch) {
  // Stable ring init: |lambda| uniform-ish in [0.4, 0.99], small phases,
  // gamma normalizing the input gain.
  Tensor nu({n}), theta({n}), gamma({n});
  for (int i = 0; i < n; ++i) {
    double u = rng.next_unit();
    double r2 = 0.4 * 0.4 + u * (0.99 * 0.99 - 0.4 * 0.4);
    nu.data[i] = std::log(-0.5 * std::log(r2));
    theta.data[i] = std::log(2.0 * M_PI / 10.0 * (rng.next_unit() + 1e-4));
    gamma.data[i] = 0.5 * std::log(std::max(1e-8, 1.0 - r2));
  }
  p.emplace_back(prefix + ".nu_log", std::move(nu));
  p.emplace_back(prefix + ".theta_log", std::move(theta));
  p.emplace_back(prefix + ".gamma_log", std::move(gamma));
  double sb = 1.0 / std::sqrt(2.0 * width);
  p.emplace_back(prefix + ".b_re", gaussian(rng, {n, width}, sb));
  p.emplace_back(prefix + ".b_im", gaussian(rng, {n, width}, sb));
  double sc = 1.0 / std::sqrt(2.0 * n);
  p.emplace_back(prefix + ".c_re", gaussian(rng, {width, n}, sc));
  p.emplace_back(prefix + ".c_im", gaussian(rng, {width, n}, sc));
  p.emplace_back(prefix + ".d_skip", fan_in_init(rng, width, width));
  if (arch == "lru_in_out_mlp") {
    p.emplace_back(prefix + ".mlp_w1_out", fan_in_init(rng, width, width));
    p.emplace_back(prefix + ".mlp_w2_out", fan_in_init(rng, width, width));
    p.emplace_back(prefix + ".mlp_w1_in", fan_in_init(rng, width, width));
    p.emplace_back(prefix + ".mlp_w2_in", fan_in_init(rng, width, width));
  } else {
    p.emplace_back(prefix + ".wm_out", fan_in_init(rng, width, width));
    p.emplace_back(prefix + ".wx_out", fan_in_init(rng, width, width));
    if (arch == "lru_in_out") {
      p.emplace_back(prefix + ".wm_in", fan_in_init(rng, width, width));
      p.emplace_back(prefix + ".wx_in", fan_in_init(rng, width, width));
    }
  }
}

}  // namespace

ParamSet init_params(const ArchSpec& spec, Rng& rng) {
  ParamSet p;
  const int n = spec.hidden, m = spec.gated_or_hidden();
  if (spec.arch == "gated_rnn" || spec.arch == "dense_gated_rnn") {
    p.emplace_back("w_m_in", fan_in_init(rng, n, spec.d_in));
    p.emplace_back("w_x_in", fan_in_init(rng, n, spec.d_in));
    if (spec.arch == "gated_rnn") {
      p.emplace_back("nu_log", lambda_init(n));
    } else {
      // start the dense recurrence at a stable diagonal
      Tensor a({n, n});
      Tensor nu = lambda_init(n);
      for (int i = 0; i < n; ++i)
        a.data[static_cast<size_t>(i) * n + i] = std::exp(-std::exp(nu.data[i]));
      p.emplace_back("a_rec", std::move(a));
    }
    p.emplace_back("w_m_out", fan_in_init(rng, m, n));
    p.emplace_back("w_x_out", fan_in_init(rng, m, n));
    p.emplace_back("d_readout", fan_in_init(rng, spec.d_out, m));
  } else if (spec.arch == "side_gated_rnn") {
    p.emplace_back("w_m_in", fan_in_init(rng, n, spec.d_in));
    p.emplace_back("w_x_in", fan_in_init(rng, n, spec.d_in));
    p.emplace_back("nu_log", lambda_init(n));
    p.emplace_back("w_side", fan_in_init(rng, n, spec.d_in));
    p.emplace_back("d_readout", fan_in_init(rng, spec.d_out, n));
  } else if (spec.arch == "lstm") {
    p.emplace_back("embed", fan_in_init(rng, n, spec.d_in));
    for (int l = 0; l < spec.layers; ++l)
      init_lstm_layer(p, rng, "l" + std::to_string(l), n, n);
    p.emplace_back("readout", fan_in_init(rng, spec.d_out, n));
  } else if (spec.arch == "gru") {
    p.emplace_back("embed", fan_in_init(rng, n, spec.d_in));
    for (int l = 0; l < spec.layers; ++l)
      init_gru_layer(p, rng, "l" + std::to_string(l), n, n);
    p.emplace_back("readout", fan_in_init(rng, spec.d_out, n));
  } else if (spec.arch == "lru_out" || spec.arch == "lru_in_out" ||
             spec.arch == "lru_in_out_mlp") {
    p.emplace_back("embed", fan_in_init(rng, n, spec.d_in));
    for (int l = 0; l < spec.layers; ++l)
      init_lru_layer(p, rng, "l" + std::to_string(l), n, n, spec.arch);
    p.emplace_back("readout", fan_in_init(rng, spec.d_out, n));
  } else {
    throw Error("init_params: unknown architecture '" + spec.arch + "'");
  }
  return p;
}

std::set<std::string> decay_exempt_params(const ArchSpec& spec) {
  std::set<std::string> out;
  if (spec.arch == "gated_rnn" || spec.arch == "side_gated_rnn") out.insert("nu_log");
  if (spec.arch.rfind("lru", 0) == 0) {
    for (int l = 0; l < spec.layers; ++l) {
      out.insert("l" + std::to_string(l) + ".nu_log");
      out.insert("l" + std::to_string(l) + ".theta_log");
      out.insert("l" + std::to_string(l) + ".gamma_log");
    }
  }
  return out;
}

namespace {

struct BatchValues {
  Value x_flat;   // (B*T, d_in)
  Value x_seq;    // (B, T, d_in)
  Value targets;  // (B*T, d_out)
  Value mask;     // (B*T)
};

BatchValues load_batch(Graph& g, const SequenceBatch& batch) {
  BatchValues v;
  Tensor x({batch.batch, batch.seq_len, batch.d_in}, batch.inputs);
  v.x_seq = g.constant(x);
  v.x_flat = g.reshape(v.x_seq, {batch.batch * batch.seq_len, batch.d_in});
  v.targets = g.constant(Tensor({batch.batch * batch.seq_len, batch.d_out}, batch.targets));
  v.mask = g.constant(Tensor({batch.batch * batch.seq_len}, batch.mask));
  return v;
}

Value attach_loss(Graph& g, Value pred, const BatchValues& bv, const SequenceBatch& batch,
                  LossKind kind) {
  if (kind == LossKind::kMse) return g.masked_mse(pred, bv.targets, bv.mask);
  if (batch.class_targets.size() != batch.mask.size())
    throw Error("build_loss: class targets missing for cross-entropy");
  return g.masked_xent(pred, batch.class_targets, bv.mask);
}

Value at(const std::map<std::string, Value>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error("build_loss: missing parameter '" + name + "'");
  return it->second;
}

Value glu_block(Graph& g, Value x, Value wm, Value wx) {
  return g.mul(g.sigmoid(g.matmul(x, wm, false, true)), g.matmul(x, wx, false, true));
}

Value mlp_block(Graph& g, Value x, Value w1, Value w2) {
  return g.matmul(g.tanh_(g.matmul(x, w1, false, true)), w2, false, true);
}

}  // namespace

BuiltGraph build_loss(Graph& g, const ArchSpec& spec,
                      const std::map<std::string, Value>& p, const SequenceBatch& batch,
                      LossKind loss_kind) {
  if (batch.d_in != spec.d_in || batch.d_out != spec.d_out)
    throw ShapeError("build_loss: batch widths disagree with the architecture");
  BatchValues bv = load_batch(g, batch);
  const int B = batch.batch, T = batch.seq_len;
  Value pred;

  if (spec.arch == "gated_rnn" || spec.arch == "dense_gated_rnn") {
    Value gm = g.matmul(bv.x_flat, at(p, "w_m_in"), false, true);
    Value gx = g.matmul(bv.x_flat, at(p, "w_x_in"), false, true);
    Value u = g.mul(gm, gx);
    Value hf;
    if (spec.arch == "gated_rnn") {
      Value lam = g.exp_(g.neg(g.exp_(at(p, "nu_log"))));
      hf = g.diag_scan(lam, u, B, T);
    } else {
      hf = g.dense_scan(at(p, "a_rec"), u, B, T);
    }
    Value om = g.matmul(hf, at(p, "w_m_out"), false, true);
    Value ox = g.matmul(hf, at(p, "w_x_out"), false, true);
    pred = g.matmul(g.mul(om, ox), at(p, "d_readout"), false, true);
  } else if (spec.arch == "side_gated_rnn") {
    Value gm = g.matmul(bv.x_flat, at(p, "w_m_in"), false, true);
    Value gx = g.matmul(bv.x_flat, at(p, "w_x_in"), false, true);
    Value u = g.mul(gm, gx);
    Value lam = g.exp_(g.neg(g.exp_(at(p, "nu_log"))));
    Value hf = g.diag_scan(lam, u, B, T);
    Value side = g.matmul(bv.x_flat, at(p, "w_side"), false, true);
    pred = g.matmul(g.mul(side, hf), at(p, "d_readout"), false, true);
  } else if (spec.arch == "lstm") {
    std::vector<Value> ys;
    std::vector<Value> hs(spec.layers), cs(spec.layers);
    for (int t = 0; t < T; ++t) {
      Value u = g.matmul(g.time_slice(bv.x_seq, t), at(p, "embed"), false, true);
      for (int l = 0; l < spec.layers; ++l) {
        std::string pre = "l" + std::to_string(l);
        auto gate = [&](const char* name) {
          Value z = g.add_row_bias(g.matmul(u, at(p, pre + ".u_" + name), false, true),
                                   at(p, pre + ".b_" + name));
          if (hs[l].valid())
            z = g.add(z, g.matmul(hs[l], at(p, pre + ".v_" + name), false, true));
          return z;
        };
        Value f = g.sigmoid(gate("f"));
        Value cc = g.tanh_(gate("c"));
        Value gg = g.sigmoid(gate("g"));
        Value o = g.sigmoid(gate("o"));
        Value c_new = g.mul(gg, cc);
        if (cs[l].valid()) c_new = g.add(c_new, g.mul(f, cs[l]));
        cs[l] = c_new;
        hs[l] = g.mul(o, g.tanh_(c_new));
        u = hs[l];
      }
      ys.push_back(g.matmul(u, at(p, "readout"), false, true));
    }
    pred = g.reshape(g.stack_time(ys), {B * T, spec.d_out});
  } else if (spec.arch == "gru") {
    std::vector<Value> ys;
    std::vector<Value> hs(spec.layers);
    for (int t = 0; t < T; ++t) {
      Value u = g.matmul(g.time_slice(bv.x_seq, t), at(p, "embed"), false, true);
      for (int l = 0; l < spec.layers; ++l) {
        std::string pre = "l" + std::to_string(l);
        auto gate_in = [&](const char* name) {
          return g.add_row_bias(g.matmul(u, at(p, pre + ".u_" + name), false, true),
                                at(p, pre + ".b_" + name));
        };
        Value zr = gate_in("r");
        Value zz = gate_in("z");
        if (hs[l].valid()) {
          zr = g.add(zr, g.matmul(hs[l], at(p, pre + ".v_r"), false, true));
          zz = g.add(zz, g.matmul(hs[l], at(p, pre + ".v_z"), false, true));
        }
        Value r = g.sigmoid(zr);
        Value z = g.sigmoid(zz);
        Value zh = gate_in("h");
        if (hs[l].valid())
          zh = g.add(zh, g.matmul(g.mul(r, hs[l]), at(p, pre + ".v_h"), false, true));
        Value cand = g.tanh_(zh);
        // h' = (1 - z) . h + z . cand
        Value h_new = g.mul(z, cand);
        if (hs[l].valid()) h_new = g.add(h_new, g.sub(hs[l], g.mul(z, hs[l])));
        hs[l] = h_new;
        u = hs[l];
      }
      ys.push_back(g.matmul(u, at(p, "readout"), false, true));
    }
    pred = g.reshape(g.stack_time(ys), {B * T, spec.d_out});
  } else if (spec.arch == "lru_out" || spec.arch == "lru_in_out" ||
             spec.arch == "lru_in_out_mlp") {
    const bool in_gate = spec.arch != "lru_out";
    const bool mlp = spec.arch == "lru_in_out_mlp";
    const int n = spec.hidden;
    Value u = g.matmul(bv.x_flat, at(p, "embed"), false, true);
    for (int l = 0; l < spec.layers; ++l) {
      std::string pre = "l" + std::to_string(l);
      Value v = u;
      if (in_gate)
        v = mlp ? mlp_block(g, u, at(p, pre + ".mlp_w1_in"), at(p, pre + ".mlp_w2_in"))
                : glu_block(g, u, at(p, pre + ".wm_in"), at(p, pre + ".wx_in"));
      Value gamma = g.exp_(at(p, pre + ".gamma_log"));
      Value ure = g.mul_row_vec(g.matmul(v, at(p, pre + ".b_re"), false, true), gamma);
      Value uim = g.mul_row_vec(g.matmul(v, at(p, pre + ".b_im"), false, true), gamma);
      Value mag = g.exp_(g.neg(g.exp_(at(p, pre + ".nu_log"))));
      Value phase = g.exp_(at(p, pre + ".theta_log"));
      Value lre = g.mul(mag, g.cos_(phase));
      Value lim = g.mul(mag, g.sin_(phase));
      Value h = g.complex_diag_scan(lre, lim, ure, uim, B, T);
      Value hre = g.slice_cols(h, 0, n);
      Value him = g.slice_cols(h, n, 2 * n);
      Value ytilde = g.add(g.sub(g.matmul(hre, at(p, pre + ".c_re"), false, true),
                                 g.matmul(him, at(p, pre + ".c_im"), false, true)),
                           g.matmul(v, at(p, pre + ".d_skip"), false, true));
      u = mlp ? mlp_block(g, ytilde, at(p, pre + ".mlp_w1_out"), at(p, pre + ".mlp_w2_out"))
              : glu_block(g, ytilde, at(p, pre + ".wm_out"), at(p, pre + ".wx_out"));
    }
    pred = g.matmul(u, at(p, "readout"), false, true);
  } else {
    throw Error("build_loss: unknown architecture '" + spec.arch + "'");
  }

  BuiltGraph out;
  out.pred = pred;
  out.loss = attach_loss(g, pred, bv, batch, loss_kind);
  return out;
}

namespace {

Matrix tensor_matrix(const ParamSet& params, const std::string& name) {
  const Tensor* t = find_param(params, name);
  if (!t) throw Error("params_to_model: missing parameter '" + name + "'");
  return t->to_matrix();
}

std::vector<double> tensor_vector(const ParamSet& params, const std::string& name) {
  const Tensor* t = find_param(params, name);
  if (!t) throw Error("params_to_model: missing parameter '" + name + "'");
  return t->data;
}

}  // namespace

models::ModelRef params_to_model(const ArchSpec& spec, const ParamSet& params) {
  if (spec.arch == "gated_rnn") {
    models::GatedRnnParams m;
    m.w_m_in = tensor_matrix(params, "w_m_in");
    m.w_x_in = tensor_matrix(params, "w_x_in");
    m.lambda_raw = tensor_vector(params, "nu_log");
    m.lambda_mode = models::LambdaMode::kExp;
    m.w_m_out = tensor_matrix(params, "w_m_out");
    m.w_x_out = tensor_matrix(params, "w_x_out");
    m.d_readout = tensor_matrix(params, "d_readout");
    return m;
  }
  if (spec.arch == "dense_gated_rnn") {
    models::DenseGatedRnnParams m;
    m.w_m_in = tensor_matrix(params, "w_m_in");
    m.w_x_in = tensor_matrix(params, "w_x_in");
    m.a_rec = tensor_matrix(params, "a_rec");
    m.w_m_out = tensor_matrix(params, "w_m_out");
    m.w_x_out = tensor_matrix(params, "w_x_out");
    m.d_readout = tensor_matrix(params, "d_readout");
    return m;
  }
  if (spec.arch == "side_gated_rnn") {
    models::SideGatedRnnParams m;
    m.w_m_in = tensor_matrix(params, "w_m_in");
    m.w_x_in = tensor_matrix(params, "w_x_in");
    m.lambda_raw = tensor_vector(params, "nu_log");
    m.lambda_mode = models::LambdaMode::kExp;
    m.w_side = tensor_matrix(params, "w_side");
    m.d_readout = tensor_matrix(params, "d_readout");
    return m;
  }
  if (spec.arch == "lstm") {
    models::LstmParams m;
    m.mode = models::ActivationMode::kStandard;
    m.embed = tensor_matrix(params, "embed");
    for (int l = 0; l < spec.layers; ++l) {
      std::string pre = "l" + std::to_string(l);
      models::LstmLayer ly;
      ly.u_f = tensor_matrix(params, pre + ".u_f");
      ly.v_f = tensor_matrix(params, pre + ".v_f");
      ly.b_f = tensor_vector(params, pre + ".b_f");
      ly.u_c = tensor_matrix(params, pre + ".u_c");
      ly.v_c = tensor_matrix(params, pre + ".v_c");
      ly.b_c = tensor_vector(params, pre + ".b_c");
      ly.u_g = tensor_matrix(params, pre + ".u_g");
      ly.v_g = tensor_matrix(params, pre + ".v_g");
      ly.b_g = tensor_vector(params, pre + ".b_g");
      ly.u_o = tensor_matrix(params, pre + ".u_o");
      ly.v_o = tensor_matrix(params, pre + ".v_o");
      ly.b_o = tensor_vector(params, pre + ".b_o");
      m.layers.push_back(std::move(ly));
    }
    m.readout = tensor_matrix(params, "readout");
    return m;
  }
  if (spec.arch == "gru") {
    models::GruParams m;
    m.embed = tensor_matrix(params, "embed");
    for (int l = 0; l < spec.layers; ++l) {
      std::string pre = "l" + std::to_string(l);
      models::GruLayer ly;
      ly.u_r = tensor_matrix(params, pre + ".u_r");
      ly.v_r = tensor_matrix(params, pre + ".v_r");
      ly.b_r = tensor_vector(params, pre + ".b_r");
      ly.u_h = tensor_matrix(params, pre + ".u_h");
      ly.v_h = tensor_matrix(params, pre + ".v_h");
      ly.b_h = tensor_vector(params, pre + ".b_h");
      ly.u_z = tensor_matrix(params, pre + ".u_z");
      ly.v_z = tensor_matrix(params, pre + ".v_z");
      ly.b_z = tensor_vector(params, pre + ".b_z");
      m.layers.push_back(std::move(ly));
    }
    m.readout = tensor_matrix(params, "readout");
    return m;
  }
  if (spec.arch.rfind("lru", 0) == 0) {
    models::LruParams m;
    m.post = spec.arch == "lru_out"
                 ? models::LruPostBlock::kGluOut
                 : (spec.arch == "lru_in_out" ? models::LruPostBlock::kGluInOut
                                              : models::LruPostBlock::kMlpInOut);
    m.embed = tensor_matrix(params, "embed");
    for (int l = 0; l < spec.layers; ++l) {
      std::string pre = "l" + std::to_string(l);
      models::LruLayer ly;
      ly.nu_log = tensor_vector(params, pre + ".nu_log");
      ly.theta_log = tensor_vector(params, pre + ".theta_log");
      ly.gamma_log = tensor_vector(params, pre + ".gamma_log");
      Matrix bre = tensor_matrix(params, pre + ".b_re");
      Matrix bim = tensor_matrix(params, pre + ".b_im");
      ly.b_in = num::CMatrix(bre.rows, bre.cols);
      for (size_t i = 0; i < ly.b_in.data.size(); ++i)
        ly.b_in.data[i] = {bre.data[i], bim.data[i]};
      Matrix cre = tensor_matrix(params, pre + ".c_re");
      Matrix cim = tensor_matrix(params, pre + ".c_im");
      ly.c_out = num::CMatrix(cre.rows, cre.cols);
      for (size_t i = 0; i < ly.c_out.data.size(); ++i)
        ly.c_out.data[i] = {cre.data[i], cim.data[i]};
      ly.d_skip = tensor_matrix(params, pre + ".d_skip");
      if (m.post == models::LruPostBlock::kMlpInOut) {
        ly.mlp_w1_out = tensor_matrix(params, pre + ".mlp_w1_out");
        ly.mlp_w2_out = tensor_matrix(params, pre + ".mlp_w2_out");
        ly.mlp_w1_in = tensor_matrix(params, pre + ".mlp_w1_in");
        ly.mlp_w2_in = tensor_matrix(params, pre + ".mlp_w2_in");
      } else {
        ly.wm_out = tensor_matrix(params, pre + ".wm_out");
        ly.wx_out = tensor_matrix(params, pre + ".wx_out");
        if (m.post == models::LruPostBlock::kGluInOut) {
          ly.wm_in = tensor_matrix(params, pre + ".wm_in");
          ly.wx_in = tensor_matrix(params, pre + ".wx_in");
        }
      }
      m.layers.push_back(std::move(ly));
    }
    m.readout = tensor_matrix(params, "readout");
    return m;
  }
  throw Error("params_to_model: unknown architecture '" + spec.arch + "'");
}

}  // namespace linattn::grad
