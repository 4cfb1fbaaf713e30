#include "linattn/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "linattn/models/fingerprint.hpp"
#include "linattn/models/forward.hpp"

namespace linattn::analysis {

using models::GatedRnnParams;
using models::SequenceBatch;
using num::Matrix;

const char* lambda_class_name(LambdaClass c) {
  switch (c) {
    case LambdaClass::kIntegrator: return "integrator";
    case LambdaClass::kMemoryless: return "memoryless";
    case LambdaClass::kOther: return "other";
  }
  return "other";
}

std::vector<LambdaClass> classify_lambda(const std::vector<double>& lambda, double tol) {
  std::vector<LambdaClass> out(lambda.size(), LambdaClass::kOther);
  for (size_t i = 0; i < lambda.size(); ++i) {
    if (lambda[i] >= 1.0 - tol)
      out[i] = LambdaClass::kIntegrator;
    else if (lambda[i] <= tol)
      out[i] = LambdaClass::kMemoryless;
  }
  return out;
}

std::vector<LambdaClass> classify_lambda(const GatedRnnParams& p, double tol) {
  return classify_lambda(p.lambda(), tol);
}

namespace {

double row_max_abs(const Matrix& m, int row) {
  double v = 0.0;
  for (int j = 0; j < m.cols; ++j) v = std::max(v, std::abs(m(row, j)));
  return v;
}

double col_max_abs(const Matrix& m, int col) {
  double v = 0.0;
  for (int i = 0; i < m.rows; ++i) v = std::max(v, std::abs(m(i, col)));
  return v;
}

Matrix select_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<int>(rows.size()), m.cols);
  for (size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < m.cols; ++j) out(static_cast<int>(i), j) = m(rows[i], j);
  return out;
}

Matrix select_cols(const Matrix& m, const std::vector<int>& cols) {
  Matrix out(m.rows, static_cast<int>(cols.size()));
  for (int i = 0; i < m.rows; ++i)
    for (size_t j = 0; j < cols.size(); ++j) out(i, static_cast<int>(j)) = m(i, cols[j]);
  return out;
}

}  // namespace

std::pair<GatedRnnParams, PruneReport> prune(const GatedRnnParams& p, double weight_tol,
                                             const SequenceBatch& verify_batch) {
  p.check();
  const int n = p.hidden(), m = p.gated_outputs();
  const double tol_in =
      weight_tol * std::max(p.w_m_in.max_abs(), p.w_x_in.max_abs());
  const double tol_out =
      weight_tol * std::max(p.w_m_out.max_abs(), p.w_x_out.max_abs());
  const double tol_d = weight_tol * p.d_readout.max_abs();

  PruneReport rep;
  rep.weight_tol_used = weight_tol;
  for (int j = 0; j < n; ++j) {
    bool input_dead =
        row_max_abs(p.w_m_in, j) < tol_in || row_max_abs(p.w_x_in, j) < tol_in;
    bool output_dead =
        col_max_abs(p.w_m_out, j) < tol_out && col_max_abs(p.w_x_out, j) < tol_out;
    if (input_dead || output_dead)
      rep.removed_hidden.push_back(j);
    else
      rep.kept_hidden.push_back(j);
  }
  for (int i = 0; i < m; ++i) {
    bool dead = col_max_abs(p.d_readout, i) < tol_d ||
                row_max_abs(p.w_m_out, i) < tol_out ||
                row_max_abs(p.w_x_out, i) < tol_out;
    if (dead)
      rep.removed_gated.push_back(i);
    else
      rep.kept_gated.push_back(i);
  }

  GatedRnnParams out;
  out.lambda_mode = p.lambda_mode;
  out.w_m_in = select_rows(p.w_m_in, rep.kept_hidden);
  out.w_x_in = select_rows(p.w_x_in, rep.kept_hidden);
  for (int j : rep.kept_hidden) out.lambda_raw.push_back(p.lambda_raw[j]);
  out.w_m_out = select_cols(select_rows(p.w_m_out, rep.kept_gated), rep.kept_hidden);
  out.w_x_out = select_cols(select_rows(p.w_x_out, rep.kept_gated), rep.kept_hidden);
  out.d_readout = select_cols(p.d_readout, rep.kept_gated);

  auto lam = out.lambda();
  rep.kept_lambda_class = classify_lambda(lam, 1e-3);

  auto before = models::gated_rnn_forward(p, verify_batch).outputs;
  auto after = models::gated_rnn_forward(out, verify_batch).outputs;
  rep.deviation = before.max_abs_diff(after);
  return {std::move(out), std::move(rep)};
}

ProbeReport probe_kv_q(const GatedRnnParams& p, const models::HiddenTrace& hidden,
                       const models::AttentionParams& teacher, const SequenceBatch& batch,
                       double lambda_tol) {
  const int d = teacher.dim();
  if (batch.d_in != d && batch.d_in != d + 1)
    throw ShapeError("probe_kv_q: batch width does not match the teacher");
  if (hidden.n != p.hidden() || hidden.batch != batch.batch || hidden.seq_len != batch.seq_len)
    throw ShapeError("probe_kv_q: hidden trace does not match the batch");

  auto classes = classify_lambda(p, lambda_tol);
  std::vector<int> integ, memless;
  for (int i = 0; i < p.hidden(); ++i) {
    if (classes[i] == LambdaClass::kIntegrator) integ.push_back(i);
    if (classes[i] == LambdaClass::kMemoryless) memless.push_back(i);
  }

  const int rows = batch.batch * batch.seq_len;
  // teacher-side targets on the raw (unaugmented) coordinates
  Matrix kv_targets(rows, d * d);
  Matrix q_targets(rows, d);
  std::vector<double> wff(static_cast<size_t>(d) * d);
  for (int b = 0; b < batch.batch; ++b) {
    std::fill(wff.begin(), wff.end(), 0.0);
    for (int t = 0; t < batch.seq_len; ++t) {
      const double* x = batch.input_at(b, t);
      std::vector<double> xv(x, x + d);
      auto v = num::matvec(teacher.w_v, xv);
      auto k = num::matvec(teacher.w_k, xv);
      auto q = num::matvec(teacher.w_q, xv);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) wff[static_cast<size_t>(i) * d + j] += v[i] * k[j];
      int r = b * batch.seq_len + t;
      for (int i = 0; i < d * d; ++i) kv_targets(r, i) = wff[i];
      for (int i = 0; i < d; ++i) q_targets(r, i) = q[i];
    }
  }

  auto regress = [&](const std::vector<int>& neuron_set, const Matrix& targets,
                     double* score, Matrix* weights) {
    Matrix design(rows, static_cast<int>(neuron_set.size()) + 1);
    for (int b = 0; b < batch.batch; ++b)
      for (int t = 0; t < batch.seq_len; ++t) {
        int r = b * batch.seq_len + t;
        const double* h = hidden.at(b, t);
        for (size_t j = 0; j < neuron_set.size(); ++j)
          design(r, static_cast<int>(j)) = h[neuron_set[j]];
        design(r, static_cast<int>(neuron_set.size())) = 1.0;  // bias
      }
    auto fit = num::least_squares(design, targets);
    double s = 0.0;
    for (double r2 : fit.r2) s += 1.0 - r2;
    *score = s / targets.cols;
    *weights = fit.x;
  };

  ProbeReport rep;
  rep.n_integrator = static_cast<int>(integ.size());
  rep.n_memoryless = static_cast<int>(memless.size());
  regress(integ, kv_targets, &rep.score_kv, &rep.kv_probe);
  regress(memless, q_targets, &rep.score_q, &rep.q_probe);
  return rep;
}

double fingerprint_distance(const models::ModelRef& a, const models::ModelRef& b,
                            int max_degree) {
  auto fa = models::instantaneous_fingerprint(a, max_degree);
  auto fb = models::instantaneous_fingerprint(b, max_degree);
  if (fa.nvars() == fb.nvars() + 1)
    fa = fa.substitute(fa.nvars() - 1, 1.0);
  else if (fb.nvars() == fa.nvars() + 1)
    fb = fb.substitute(fb.nvars() - 1, 1.0);
  return poly::coefficient_distance(fa, fb, max_degree);
}

std::pair<GatedRnnParams, MergeReport> merge_rank1_rows(const GatedRnnParams& p,
                                                        const std::vector<int>& candidate_rows,
                                                        const MergeOptions& opts,
                                                        const SequenceBatch& verify_batch) {
  p.check();
  MergeReport rep;
  if (candidate_rows.size() < 2) {
    rep.reason = "need at least two rows to merge";
    return {p, rep};
  }
  const int n = p.hidden(), dout = p.d_out();

  // Per-output kernels K_i = sum_j D_ij m_j x_j^T over the candidate rows.
  std::vector<Matrix> kernels;
  for (int i = 0; i < dout; ++i) {
    Matrix k(n, n);
    for (int row : candidate_rows) {
      double dij = p.d_readout(i, row);
      if (dij == 0.0) continue;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          k(a, b) += dij * p.w_m_out(row, a) * p.w_x_out(row, b);
    }
    kernels.push_back(std::move(k));
  }

  int ref = -1;
  double ref_norm = 0.0;
  for (int i = 0; i < dout; ++i) {
    double norm = kernels[i].frobenius();
    if (norm > ref_norm) {
      ref_norm = norm;
      ref = i;
    }
  }
  if (ref < 0 || ref_norm == 0.0) {
    rep.reason = "candidate rows contribute nothing to any output";
    return {p, rep};
  }

  auto ref_svd = num::svd(kernels[ref]);
  for (int i = 0; i < dout; ++i) {
    double norm = kernels[i].frobenius();
    if (norm <= 1e-14 * ref_norm) continue;  // zero kernel is trivially aligned
    auto s = num::svd(kernels[i]);
    double ratio = s.s.size() > 1 && s.s[0] > 0.0 ? s.s[1] / s.s[0] : 0.0;
    rep.max_rank_ratio = std::max(rep.max_rank_ratio, ratio);
    if (ratio > opts.rank_tol) {
      rep.reason = "kernel for output " + std::to_string(i) + " is not rank-1";
      return {p, rep};
    }
    double dot = 0.0;
    for (size_t e = 0; e < kernels[i].data.size(); ++e)
      dot += kernels[i].data[e] * kernels[ref].data[e];
    double cosine = std::abs(dot) / (norm * ref_norm);
    rep.min_cosine = std::min(rep.min_cosine, cosine);
    if (cosine < opts.cosine_tol) {
      rep.reason = "kernels are not mutually proportional";
      return {p, rep};
    }
  }

  // Shared factors from the dominant kernel; per-output coefficients by
  // projection.
  std::vector<double> u(n), v(n);
  for (int a = 0; a < n; ++a) {
    u[a] = ref_svd.u(a, 0);
    v[a] = ref_svd.v(a, 0);
  }
  std::vector<double> coef(dout, 0.0);
  for (int i = 0; i < dout; ++i) {
    for (int a = 0; a < n; ++a) {
      double row = 0.0;
      for (int b = 0; b < n; ++b) row += kernels[i](a, b) * v[b];
      coef[i] += u[a] * row;
    }
  }

  std::vector<int> keep;
  for (int r = 0; r < p.gated_outputs(); ++r)
    if (std::find(candidate_rows.begin(), candidate_rows.end(), r) == candidate_rows.end())
      keep.push_back(r);

  GatedRnnParams out = p;
  out.w_m_out = select_rows(p.w_m_out, keep);
  out.w_x_out = select_rows(p.w_x_out, keep);
  Matrix new_m(1, n), new_x(1, n);
  for (int a = 0; a < n; ++a) {
    new_m(0, a) = u[a];
    new_x(0, a) = v[a];
  }
  Matrix wm(out.w_m_out.rows + 1, n), wx(out.w_x_out.rows + 1, n);
  for (int r = 0; r < out.w_m_out.rows; ++r)
    for (int a = 0; a < n; ++a) {
      wm(r, a) = out.w_m_out(r, a);
      wx(r, a) = out.w_x_out(r, a);
    }
  for (int a = 0; a < n; ++a) {
    wm(wm.rows - 1, a) = new_m(0, a);
    wx(wx.rows - 1, a) = new_x(0, a);
  }
  out.w_m_out = std::move(wm);
  out.w_x_out = std::move(wx);
  Matrix dnew(dout, static_cast<int>(keep.size()) + 1);
  for (int i = 0; i < dout; ++i) {
    for (size_t j = 0; j < keep.size(); ++j) dnew(i, static_cast<int>(j)) = p.d_readout(i, keep[j]);
    dnew(i, dnew.cols - 1) = coef[i];
  }
  out.d_readout = std::move(dnew);

  auto before = models::gated_rnn_forward(p, verify_batch).outputs;
  auto after = models::gated_rnn_forward(out, verify_batch).outputs;
  rep.deviation = before.max_abs_diff(after);
  rep.merged = true;
  return {std::move(out), std::move(rep)};
}

GreedyMergeResult greedy_merge_scan(const GatedRnnParams& p, const MergeOptions& opts,
                                    const SequenceBatch& verify_batch) {
  p.check();
  const int n = p.hidden(), m = p.gated_outputs();
  // Proportionality classes of the per-row rank-1 kernels m_j x_j^T.
  std::vector<int> cls(m, -1);
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < m; ++i) {
    if (cls[i] >= 0) continue;
    cls[i] = static_cast<int>(groups.size());
    groups.push_back({i});
    double ni = 0.0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        double v = p.w_m_out(i, a) * p.w_x_out(i, b);
        ni += v * v;
      }
    for (int j = i + 1; j < m; ++j) {
      if (cls[j] >= 0) continue;
      double dot = 0.0, nj = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          double vi = p.w_m_out(i, a) * p.w_x_out(i, b);
          double vj = p.w_m_out(j, a) * p.w_x_out(j, b);
          dot += vi * vj;
          nj += vj * vj;
        }
      if (ni > 0.0 && nj > 0.0 &&
          std::abs(dot) / std::sqrt(ni * nj) >= opts.cosine_tol) {
        cls[j] = cls[i];
        groups.back().push_back(j);
      }
    }
  }

  GreedyMergeResult out;
  out.params = p;
  // current position of every original row; merged rows are consumed
  std::vector<int> where(m);
  for (int i = 0; i < m; ++i) where[i] = i;
  std::sort(groups.begin(), groups.end(),
            [](const auto& a, const auto& b) { return a.size() > b.size(); });
  for (const auto& group : groups) {
    if (group.size() < 2) continue;
    std::vector<int> current;
    for (int orig : group)
      if (where[orig] >= 0) current.push_back(where[orig]);
    if (current.size() < 2) continue;
    auto [merged, rep] = merge_rank1_rows(out.params, current, opts, verify_batch);
    if (!rep.merged) continue;
    out.params = std::move(merged);
    out.merged_groups.push_back(group);
    // rows in `current` disappeared; survivors shift down by the number of
    // removed rows beneath them
    std::vector<int> removed = current;
    std::sort(removed.begin(), removed.end());
    for (int i = 0; i < m; ++i) {
      int w = where[i];
      if (w < 0) continue;
      if (std::find(removed.begin(), removed.end(), w) != removed.end()) {
        where[i] = -1;
        continue;
      }
      int shift = 0;
      for (int r : removed)
        if (r < w) ++shift;
      where[i] = w - shift;
    }
  }
  auto before = models::gated_rnn_forward(p, verify_batch).outputs;
  auto after = models::gated_rnn_forward(out.params, verify_batch).outputs;
  out.deviation = before.max_abs_diff(after);
  return out;
}

IclTermsReport icl_polynomial_terms(const models::ModelRef& model, int d_x, int d_y) {
  auto fp = models::instantaneous_fingerprint(model, 4);
  const int width = d_x + d_y;
  if (fp.nvars() == width + 1)
    fp = fp.substitute(width, 1.0);
  else if (fp.nvars() != width)
    throw ShapeError("icl_polynomial_terms: fingerprint variable count mismatch");

  int unit_offset = 0;
  if (fp.size() == width)
    unit_offset = d_x;  // token-shaped outputs: prediction units follow the x block
  else if (fp.size() != d_y)
    throw ShapeError("icl_polynomial_terms: output unit count mismatch");

  IclTermsReport rep;
  rep.d_x = d_x;
  rep.d_y = d_y;
  for (int c = 0; c < d_y; ++c) {
    const auto& comp = fp.components[unit_offset + c];
    std::vector<double> coeffs(d_x, 0.0);
    std::vector<poly::Exponents> table_terms;
    for (int j = 0; j < d_x; ++j) {
      poly::Exponents e(width, 0);
      e[j] = 2;
      e[d_x + c] = 1;
      coeffs[j] = comp.coefficient(e);
      table_terms.push_back(e);
    }
    double resid = 0.0;
    for (const auto& [e, coefv] : comp.terms()) {
      if (std::find(table_terms.begin(), table_terms.end(), e) != table_terms.end()) continue;
      resid += coefv * coefv;
    }
    rep.coefficients.push_back(std::move(coeffs));
    rep.residual.push_back(std::sqrt(resid));
  }
  return rep;
}

RecallProbeReport recall_bilinear_probe(const models::ModelRef& model, int t_pairs) {
  const int v = 2 * t_pairs;
  RecallProbeReport rep;
  rep.t_pairs = t_pairs;

  auto map_for_token = [&](const std::vector<double>& token) {
    if (const auto* side = std::get_if<models::SideGatedRnnParams>(&model)) {
      if (side->d_in() != v) throw ShapeError("recall_bilinear_probe: width mismatch");
      auto gm = num::matvec(side->w_m_in, token);
      auto gx = num::matvec(side->w_x_in, token);
      const int n = side->hidden();
      Matrix m(v, v);
      // M = D diag(g_in(token)) W_side
      for (int r = 0; r < v; ++r)
        for (int c = 0; c < v; ++c) {
          double s = 0.0;
          for (int k = 0; k < n; ++k)
            s += side->d_readout(r, k) * gm[k] * gx[k] * side->w_side(k, c);
          m(r, c) = s;
        }
      return m;
    }
    if (const auto* att = std::get_if<models::AttentionParams>(&model)) {
      if (att->dim() != v) throw ShapeError("recall_bilinear_probe: width mismatch");
      auto val = num::matvec(att->w_v, token);
      auto key = num::matvec(att->w_k, token);
      Matrix outer(v, v);
      for (int r = 0; r < v; ++r)
        for (int c = 0; c < v; ++c) outer(r, c) = val[r] * key[c];
      return num::matmul(outer, att->w_q);
    }
    throw Error("recall_bilinear_probe: supports side-gated RNNs and attention");
  };

  for (int i = 0; i < t_pairs; ++i) {
    for (int j = 0; j < t_pairs; ++j) {
      std::vector<double> token(v, 0.0);
      token[i] = 1.0;
      token[t_pairs + j] = 1.0;
      Matrix m = map_for_token(token);
      auto s = num::svd(m);
      double ratio = s.s.size() > 1 && s.s[0] > 0.0 ? s.s[1] / s.s[0] : 0.0;
      rep.rank_ratio.push_back(ratio);
      rep.max_rank_ratio = std::max(rep.max_rank_ratio, ratio);
      int pr = 0, pc = 0;
      double best = -1.0;
      for (int r = 0; r < v; ++r)
        for (int c = 0; c < v; ++c)
          if (std::abs(m(r, c)) > best) {
            best = std::abs(m(r, c));
            pr = r;
            pc = c;
          }
      rep.peak_row.push_back(pr);
      rep.peak_col.push_back(pc);
    }
  }
  return rep;
}

namespace {

using nlohmann::json;

json lambda_classes_json(const std::vector<LambdaClass>& cs) {
  json out = json::array();
  for (auto c : cs) out.push_back(lambda_class_name(c));
  return out;
}

}  // namespace

std::string PruneReport::to_json() const {
  json j;
  j["kept_hidden"] = kept_hidden;
  j["removed_hidden"] = removed_hidden;
  j["kept_gated"] = kept_gated;
  j["removed_gated"] = removed_gated;
  j["kept_lambda_class"] = lambda_classes_json(kept_lambda_class);
  j["weight_tol"] = weight_tol_used;
  j["deviation"] = deviation;
  return j.dump(2);
}

std::string ProbeReport::to_json() const {
  json j;
  j["score_kv"] = score_kv;
  j["score_q"] = score_q;
  j["n_integrator"] = n_integrator;
  j["n_memoryless"] = n_memoryless;
  return j.dump(2);
}

std::string MergeReport::to_json() const {
  json j;
  j["merged"] = merged;
  j["reason"] = reason;
  j["max_rank_ratio"] = max_rank_ratio;
  j["min_cosine"] = min_cosine;
  j["deviation"] = deviation;
  return j.dump(2);
}

std::string IclTermsReport::to_json() const {
  json j;
  j["d_x"] = d_x;
  j["d_y"] = d_y;
  j["coefficients"] = coefficients;
  j["residual"] = residual;
  return j.dump(2);
}

std::string RecallProbeReport::to_json() const {
  json j;
  j["t_pairs"] = t_pairs;
  j["rank_ratio"] = rank_ratio;
  j["max_rank_ratio"] = max_rank_ratio;
  j["peak_row"] = peak_row;
  j["peak_col"] = peak_col;
  return j.dump(2);
}

}  // namespace linattn::analysis
