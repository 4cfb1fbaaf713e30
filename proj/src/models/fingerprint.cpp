#include "linattn/models/fingerprint.hpp"

namespace linattn::models {

using poly::Polynomial;
using poly::PolyVector;

namespace {

// Row i of w as the linear polynomial (w x)_i.
PolyVector linear_map(const num::Matrix& w) {
  PolyVector out;
  out.components.reserve(w.rows);
  for (int i = 0; i < w.rows; ++i) {
    std::vector<double> coeffs(w.row_ptr(i), w.row_ptr(i) + w.cols);
    out.components.push_back(Polynomial::linear(coeffs));
  }
  return out;
}

PolyVector elementwise_product(const PolyVector& a, const PolyVector& b) {
  PolyVector out;
  out.components.reserve(a.components.size());
  for (size_t i = 0; i < a.components.size(); ++i)
    out.components.push_back(a.components[i] * b.components[i]);
  return out;
}

}  // namespace

PolyVector attention_fingerprint(const AttentionParams& p) {
  p.check();
  const int d = p.dim();
  PolyVector v = linear_map(p.w_v);
  PolyVector k = linear_map(p.w_k);
  PolyVector q = linear_map(p.w_q);
  Polynomial kq(d);
  for (int j = 0; j < d; ++j) kq += k.components[j] * q.components[j];
  PolyVector out;
  out.components.reserve(d);
  for (int i = 0; i < d; ++i) out.components.push_back(v.components[i] * kq);
  return out;
}

PolyVector gated_rnn_fingerprint(const GatedRnnParams& p) {
  p.check();
  PolyVector g_in = elementwise_product(linear_map(p.w_m_in), linear_map(p.w_x_in));
  PolyVector g_out = elementwise_product(poly_linear_combine(p.w_m_out, g_in),
                                         poly_linear_combine(p.w_x_out, g_in));
  return poly_linear_combine(p.d_readout, g_out);
}

PolyVector side_gated_fingerprint(const SideGatedRnnParams& p) {
  p.check();
  PolyVector g_in = elementwise_product(linear_map(p.w_m_in), linear_map(p.w_x_in));
  PolyVector gated = elementwise_product(linear_map(p.w_side), g_in);
  return poly_linear_combine(p.d_readout, gated);
}

PolyVector instantaneous_fingerprint(const ModelRef& model, int max_degree) {
  PolyVector fp;
  if (const auto* a = std::get_if<AttentionParams>(&model)) {
    fp = attention_fingerprint(*a);
  } else if (const auto* g = std::get_if<GatedRnnParams>(&model)) {
    fp = gated_rnn_fingerprint(*g);
  } else if (const auto* s = std::get_if<SideGatedRnnParams>(&model)) {
    fp = side_gated_fingerprint(*s);
  } else {
    throw Error("instantaneous_fingerprint: architecture '" + arch_name(model) +
                "' has non-polynomial instantaneous processing");
  }
  if (fp.degree() > max_degree)
    throw Error("instantaneous_fingerprint: degree exceeds requested maximum");
  return fp;
}

}  // namespace linattn::models
