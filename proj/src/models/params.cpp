#include "linattn/models/params.hpp"

namespace linattn::models {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

void AttentionParams::check() const {
  int d = w_v.rows;
  require(w_v.cols == d && w_k.rows == d && w_k.cols == d && w_q.rows == d && w_q.cols == d,
          "AttentionParams: matrices must be square and share d");
  require(w_v.all_finite() && w_k.all_finite() && w_q.all_finite(),
          "AttentionParams: non-finite entries");
}

void DecayedAttentionParams::check() const {
  int d = w_v.rows;
  require(w_v.cols == d && w_k.rows == d && w_k.cols == d && w_q.rows == d && w_q.cols == d,
          "DecayedAttentionParams: matrices must be square and share d");
  require(static_cast<int>(b_v.size()) == d && static_cast<int>(b_k.size()) == d &&
              static_cast<int>(b_q.size()) == d,
          "DecayedAttentionParams: bias lengths must equal d");
  require(static_cast<int>(gamma.size()) == d, "DecayedAttentionParams: gamma length must equal d");
  for (double g : gamma)
    require(g >= 0.0 && g <= 1.0, "DecayedAttentionParams: gamma entries must lie in [0,1]");
}

std::vector<double> decode_lambda_exp(const std::vector<double>& raw) {
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) out[i] = std::exp(-std::exp(raw[i]));
  return out;
}

double encode_lambda_exp(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw Error("encode_lambda_exp: lambda must lie strictly in (0,1)");
  return std::log(-std::log(lambda));
}

std::vector<double> GatedRnnParams::lambda() const {
  if (lambda_mode == LambdaMode::kExp) return decode_lambda_exp(lambda_raw);
  std::vector<double> out = lambda_raw;
  for (double& v : out) v = std::min(1.0, std::max(0.0, v));
  return out;
}

void GatedRnnParams::check() const {
  int n = w_m_in.rows;
  require(w_x_in.rows == n && w_x_in.cols == w_m_in.cols,
          "GatedRnnParams: input gating shapes disagree");
  require(static_cast<int>(lambda_raw.size()) == n, "GatedRnnParams: lambda length != hidden");
  require(w_m_out.cols == n && w_x_out.cols == n && w_m_out.rows == w_x_out.rows,
          "GatedRnnParams: output gating shapes disagree");
  require(d_readout.cols == w_m_out.rows, "GatedRnnParams: readout width != gated outputs");
  require(w_m_in.all_finite() && w_x_in.all_finite() && w_m_out.all_finite() &&
              w_x_out.all_finite() && d_readout.all_finite(),
          "GatedRnnParams: non-finite entries");
}

std::vector<double> SideGatedRnnParams::lambda() const {
  if (lambda_mode == LambdaMode::kExp) return decode_lambda_exp(lambda_raw);
  std::vector<double> out = lambda_raw;
  for (double& v : out) v = std::min(1.0, std::max(0.0, v));
  return out;
}

void SideGatedRnnParams::check() const {
  int n = w_m_in.rows;
  require(w_x_in.rows == n && w_x_in.cols == w_m_in.cols && w_side.rows == n &&
              w_side.cols == w_m_in.cols,
          "SideGatedRnnParams: gating shapes disagree");
  require(static_cast<int>(lambda_raw.size()) == n, "SideGatedRnnParams: lambda length != hidden");
  require(d_readout.cols == n, "SideGatedRnnParams: readout width != hidden");
}

void DenseGatedRnnParams::check() const {
  int n = w_m_in.rows;
  require(w_x_in.rows == n && w_x_in.cols == w_m_in.cols,
          "DenseGatedRnnParams: input gating shapes disagree");
  require(a_rec.rows == n && a_rec.cols == n, "DenseGatedRnnParams: recurrence must be n x n");
  require(w_m_out.cols == n && w_x_out.cols == n && w_m_out.rows == w_x_out.rows,
          "DenseGatedRnnParams: output gating shapes disagree");
  require(d_readout.cols == w_m_out.rows, "DenseGatedRnnParams: readout width != gated outputs");
}

void LstmParams::check() const {
  require(!layers.empty() && layers.size() <= 2, "LstmParams: 1 or 2 layers");
  int w = embed.rows;
  for (const auto& l : layers) {
    require(l.u_f.cols == w, "LstmParams: layer input width mismatch");
    int h = l.hidden();
    require(l.u_c.rows == h && l.u_g.rows == h && l.u_o.rows == h,
            "LstmParams: gate row counts disagree");
    require(l.v_f.rows == h && l.v_f.cols == h, "LstmParams: recurrent weights must be h x h");
    require(static_cast<int>(l.b_f.size()) == h && static_cast<int>(l.b_c.size()) == h &&
                static_cast<int>(l.b_g.size()) == h && static_cast<int>(l.b_o.size()) == h,
            "LstmParams: bias lengths disagree");
    w = h;
  }
  require(readout.cols == w, "LstmParams: readout width mismatch");
}

void GruParams::check() const {
  require(!layers.empty() && layers.size() <= 2, "GruParams: 1 or 2 layers");
  int w = embed.rows;
  for (const auto& l : layers) {
    require(l.u_r.cols == w, "GruParams: layer input width mismatch");
    int h = l.hidden();
    require(l.u_h.rows == h && l.u_z.rows == h, "GruParams: gate row counts disagree");
    w = h;
  }
  require(readout.cols == w, "GruParams: readout width mismatch");
}

void LruParams::check() const {
  require(!layers.empty(), "LruParams: at least one layer");
  const bool in_gate = post != LruPostBlock::kGluOut;
  const bool mlp = post == LruPostBlock::kMlpInOut;
  int w = embed.rows;
  for (const auto& l : layers) {
    int n = l.state_size();
    require(static_cast<int>(l.theta_log.size()) == n &&
                static_cast<int>(l.gamma_log.size()) == n,
            "LruParams: recurrence vector lengths disagree");
    int u = w;
    if (in_gate) {
      if (mlp) {
        require(l.mlp_w1_in.cols == w && l.mlp_w2_in.cols == l.mlp_w1_in.rows,
                "LruParams: input mlp shapes disagree");
        u = l.mlp_w2_in.rows;
      } else {
        require(l.wm_in.cols == w && l.wx_in.rows == l.wm_in.rows && l.wx_in.cols == w,
                "LruParams: input gate shapes disagree");
        u = l.wm_in.rows;
      }
    }
    require(l.b_in.rows == n && l.b_in.cols == u, "LruParams: B shape mismatch");
    require(l.c_out.cols == n, "LruParams: C shape mismatch");
    int mid = l.c_out.rows;
    require(l.d_skip.rows == mid && l.d_skip.cols == u, "LruParams: skip shape mismatch");
    if (mlp) {
      require(l.mlp_w1_out.cols == mid && l.mlp_w2_out.cols == l.mlp_w1_out.rows,
              "LruParams: output mlp shapes disagree");
      w = l.mlp_w2_out.rows;
    } else {
      require(l.wm_out.cols == mid && l.wx_out.rows == l.wm_out.rows && l.wx_out.cols == mid,
              "LruParams: output gate shapes disagree");
      w = l.wm_out.rows;
    }
  }
  require(readout.cols == w, "LruParams: readout width mismatch");
}

std::string arch_name(const ModelRef& model) {
  struct Visitor {
    std::string operator()(const AttentionParams&) { return "lsa"; }
    std::string operator()(const DecayedAttentionParams&) { return "decayed_lsa"; }
    std::string operator()(const GatedRnnParams&) { return "gated_rnn"; }
    std::string operator()(const SideGatedRnnParams&) { return "side_gated_rnn"; }
    std::string operator()(const DenseGatedRnnParams&) { return "dense_gated_rnn"; }
    std::string operator()(const LstmParams&) { return "lstm"; }
    std::string operator()(const GruParams&) { return "gru"; }
    std::string operator()(const LruParams&) { return "lru"; }
  };
  return std::visit(Visitor{}, model);
}

int model_d_in(const ModelRef& model) {
  struct Visitor {
    int operator()(const AttentionParams& p) { return p.dim(); }
    int operator()(const DecayedAttentionParams& p) { return p.dim(); }
    int operator()(const GatedRnnParams& p) { return p.d_in(); }
    int operator()(const SideGatedRnnParams& p) { return p.d_in(); }
    int operator()(const DenseGatedRnnParams& p) { return p.d_in(); }
    int operator()(const LstmParams& p) { return p.d_in(); }
    int operator()(const GruParams& p) { return p.d_in(); }
    int operator()(const LruParams& p) { return p.d_in(); }
  };
  return std::visit(Visitor{}, model);
}

int model_d_out(const ModelRef& model) {
  struct Visitor {
    int operator()(const AttentionParams& p) { return p.dim(); }
    int operator()(const DecayedAttentionParams& p) { return p.dim(); }
    int operator()(const GatedRnnParams& p) { return p.d_out(); }
    int operator()(const SideGatedRnnParams& p) { return p.d_out(); }
    int operator()(const DenseGatedRnnParams& p) { return p.d_out(); }
    int operator()(const LstmParams& p) { return p.d_out(); }
    int operator()(const GruParams& p) { return p.d_out(); }
    int operator()(const LruParams& p) { return p.d_out(); }
  };
  return std::visit(Visitor{}, model);
}

}  // namespace linattn::models
