#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "linattn/num/matrix.hpp"

namespace linattn::models {

using num::CMatrix;
using num::Matrix;

enum class ActivationMode { kStandard, kLinearized };

// Causal linear self-attention: y_t = (sum_{t'<=t} v_{t'} k_{t'}^T) q_t with
// v = W_v x, k = W_k x, q = W_q x.
struct AttentionParams {
  Matrix w_v, w_k, w_q;  // all d x d

  int dim() const { return w_v.rows; }
  void check() const;
};

// Linear self-attention with biases and per-row geometric decay of the
// accumulated outer products.
struct DecayedAttentionParams {
  Matrix w_v, w_k, w_q;
  std::vector<double> b_v, b_k, b_q;
  std::vector<double> gamma;  // per-row decay in [0,1]; retention factor is 1-gamma

  int dim() const { return w_v.rows; }
  void check() const;
};

// How the recurrence vector is stored.
//  kExp:      lambda = exp(-exp(raw)), the trainable parametrization in (0,1).
//  kDirect01: lambda stored directly; may be exactly 0 or 1 (compiled nets).
enum class LambdaMode { kExp, kDirect01 };

// Diagonal linear RNN with bilinear input/output gating:
//   h_t = lambda . h_{t-1} + (W_m_in x_t) . (W_x_in x_t)
//   y_t = D [(W_m_out h_t) . (W_x_out h_t)]
// The state read by y_t has already absorbed x_t.
struct GatedRnnParams {
  Matrix w_m_in, w_x_in;            // n x d_in
  std::vector<double> lambda_raw;   // length n, interpreted per lambda_mode
  LambdaMode lambda_mode = LambdaMode::kExp;
  Matrix w_m_out, w_x_out;          // m x n
  Matrix d_readout;                 // d_out x m

  int d_in() const { return w_m_in.cols; }
  int hidden() const { return w_m_in.rows; }
  int gated_outputs() const { return w_m_out.rows; }
  int d_out() const { return d_readout.rows; }
  std::vector<double> lambda() const;
  void check() const;
};

// Like GatedRnnParams but the output gate multiplies the state with a linear
// function of the current input: y_t = D [(W_side x_t) . h_t].
struct SideGatedRnnParams {
  Matrix w_m_in, w_x_in;           // n x d_in
  std::vector<double> lambda_raw;  // length n
  LambdaMode lambda_mode = LambdaMode::kExp;
  Matrix w_side;                   // n x d_in
  Matrix d_readout;                // d_out x n

  int d_in() const { return w_m_in.cols; }
  int hidden() const { return w_m_in.rows; }
  int d_out() const { return d_readout.rows; }
  std::vector<double> lambda() const;
  void check() const;
};

// Gated RNN with a dense recurrence: h_t = A h_{t-1} + g_in(x_t).
struct DenseGatedRnnParams {
  Matrix w_m_in, w_x_in;  // n x d_in
  Matrix a_rec;           // n x n
  Matrix w_m_out, w_x_out;
  Matrix d_readout;

  int d_in() const { return w_m_in.cols; }
  int hidden() const { return w_m_in.rows; }
  int d_out() const { return d_readout.rows; }
  void check() const;
};

// One LSTM layer: gates (f, c~, g, o), each with input weights U, recurrent
// weights V and bias b.
struct LstmLayer {
  Matrix u_f, v_f;
  std::vector<double> b_f;
  Matrix u_c, v_c;
  std::vector<double> b_c;
  Matrix u_g, v_g;
  std::vector<double> b_g;
  Matrix u_o, v_o;
  std::vector<double> b_o;

  int hidden() const { return u_f.rows; }
  int input() const { return u_f.cols; }
};

// Stacked LSTM with linear embedding and readout. Linearized mode makes the
// activations of c~, g and o the identity (f keeps a hard-saturating
// sigmoid) and reads h = o . c.
struct LstmParams {
  Matrix embed;    // width x d_in
  std::vector<LstmLayer> layers;  // 1 or 2
  Matrix readout;  // d_out x width_last
  ActivationMode mode = ActivationMode::kStandard;

  int d_in() const { return embed.cols; }
  int d_out() const { return readout.rows; }
  void check() const;
};

// One GRU layer: reset r, candidate h~, update z.
struct GruLayer {
  Matrix u_r, v_r;
  std::vector<double> b_r;
  Matrix u_h, v_h;
  std::vector<double> b_h;
  Matrix u_z, v_z;
  std::vector<double> b_z;

  int hidden() const { return u_r.rows; }
  int input() const { return u_r.cols; }
};

struct GruParams {
  Matrix embed;
  std::vector<GruLayer> layers;
  Matrix readout;
  ActivationMode mode = ActivationMode::kStandard;

  int d_in() const { return embed.cols; }
  int d_out() const { return readout.rows; }
  void check() const;
};

enum class LruPostBlock { kGluOut, kGluInOut, kMlpInOut };

// One linear recurrent unit layer. The recurrent state is complex diagonal:
//   h_t = lambda . h_{t-1} + gamma . (B u_t),   lambda = exp(-exp(nu_log) + i exp(theta_log))
//   ytilde_t = Re[C h_t] + D_skip u_t
// followed by an output GLU (or MLP). In the In+Out variants u_t is itself
// the output of an input GLU (or MLP) applied to the layer input.
struct LruLayer {
  std::vector<double> nu_log, theta_log, gamma_log;  // length n
  CMatrix b_in;   // n x width (complex)
  CMatrix c_out;  // width x n (complex)
  Matrix d_skip;  // width x width (real)
  // Output gate / MLP.
  Matrix wm_out, wx_out;        // GLU branches, width x width
  Matrix mlp_w1_out, mlp_w2_out;  // used instead when post = kMlpInOut
  // Input gate / MLP (In+Out variants only).
  Matrix wm_in, wx_in;
  Matrix mlp_w1_in, mlp_w2_in;

  int state_size() const { return static_cast<int>(nu_log.size()); }
  int width() const { return d_skip.rows; }
};

struct LruParams {
  Matrix embed;
  std::vector<LruLayer> layers;
  Matrix readout;
  LruPostBlock post = LruPostBlock::kGluOut;

  int d_in() const { return embed.cols; }
  int d_out() const { return readout.rows; }
  void check() const;
};

// Any model the toolkit can run forward.
using ModelRef =
    std::variant<AttentionParams, DecayedAttentionParams, GatedRnnParams,
                 SideGatedRnnParams, DenseGatedRnnParams, LstmParams, GruParams,
                 LruParams>;

std::string arch_name(const ModelRef& model);
int model_d_in(const ModelRef& model);
int model_d_out(const ModelRef& model);

// lambda = exp(-exp(raw)) elementwise.
std::vector<double> decode_lambda_exp(const std::vector<double>& raw);
// Inverse of the exponential parametrization, for lambda strictly in (0,1).
double encode_lambda_exp(double lambda);

}  // namespace linattn::models
