#include "linattn/tasks/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "linattn/models/forward.hpp"

namespace linattn::tasks {

using models::SequenceBatch;
using num::Matrix;
using num::Rng;

double TeacherStudentSpec::weight_std() const {
  return teacher_weight_std > 0.0 ? teacher_weight_std : 1.0 / std::sqrt(static_cast<double>(d));
}

models::AttentionParams make_teacher(const TeacherStudentSpec& spec) {
  Rng rng = Rng(spec.teacher_seed).split("teacher");
  models::AttentionParams p;
  p.w_v = num::sample_normal(rng, spec.d, spec.d, spec.weight_std());
  p.w_k = num::sample_normal(rng, spec.d, spec.d, spec.weight_std());
  p.w_q = num::sample_normal(rng, spec.d, spec.d, spec.weight_std());
  return p;
}

SequenceBatch gen_teacher_student(const TeacherStudentSpec& spec, Rng& rng, int batch) {
  if (spec.d < 1) throw Error("gen_teacher_student: d must be >= 1");
  auto teacher = make_teacher(spec);
  SequenceBatch b(batch, spec.seq_len, spec.d, spec.d);
  for (double& v : b.inputs) v = rng.normal(0.0, spec.input_std);
  for (double& v : b.mask) v = 1.0;
  auto out = models::lsa_forward(teacher, b);
  b.targets = out.values;
  return b;
}

SequenceBatch gen_icl_regression(const IclRegressionSpec& spec, Rng& rng, int batch,
                                 IclVariant variant,
                                 const std::vector<Matrix>* w_star_override) {
  const int T = spec.t_context, dx = spec.d_x, dy = spec.d_y;
  const double var =
      variant == IclVariant::kTrain ? spec.w_star_var_train : spec.w_star_var_validation;
  const double wstd = std::sqrt(var);
  const double a = spec.input_half_width;
  SequenceBatch b(batch, spec.seq_len(), spec.token_width(), dy);
  for (int i = 0; i < batch; ++i) {
    Matrix wstar = w_star_override ? (*w_star_override)[i]
                                   : num::sample_normal(rng, dy, dx, wstd);
    for (int t = 0; t <= T; ++t) {
      double* tok = b.input_at(i, t);
      for (int j = 0; j < dx; ++j) tok[j] = rng.uniform(-a, a);
      if (t < T) {
        for (int r = 0; r < dy; ++r) {
          double s = 0.0;
          for (int j = 0; j < dx; ++j) s += wstar(r, j) * tok[j];
          tok[dx + r] = s;
        }
      } else {
        // query token (x_{T+1}, 0); the target is W* x_{T+1}
        for (int r = 0; r < dy; ++r) {
          double s = 0.0;
          for (int j = 0; j < dx; ++j) s += wstar(r, j) * tok[j];
          b.target_at(i, t)[r] = s;
        }
        b.mask[static_cast<size_t>(i) * spec.seq_len() + t] = 1.0;
      }
    }
  }
  return b;
}

Matrix gd_baseline_predict(const IclRegressionSpec& spec, const SequenceBatch& batch,
                           double eta) {
  const int T = spec.t_context, dx = spec.d_x, dy = spec.d_y;
  if (batch.d_in != spec.token_width() || batch.seq_len != spec.seq_len())
    throw ShapeError("gd_baseline_predict: batch does not match the task spec");
  Matrix pred(batch.batch, dy);
  for (int i = 0; i < batch.batch; ++i) {
    const double* query = batch.input_at(i, T);
    for (int t = 0; t < T; ++t) {
      const double* tok = batch.input_at(i, t);
      double xdot = 0.0;
      for (int j = 0; j < dx; ++j) xdot += tok[j] * query[j];
      for (int r = 0; r < dy; ++r) pred(i, r) += eta * tok[dx + r] * xdot;
    }
  }
  return pred;
}

double optimal_eta(const IclRegressionSpec& spec) {
  return 1.0 / (spec.sigma_x_sq() * (spec.t_context + spec.d_x - 0.2));
}

std::vector<double> gd_baseline_loss_grid(const IclRegressionSpec& spec,
                                          const std::vector<double>& etas, int n_mc,
                                          Rng& rng) {
  // The prediction is linear in eta: yhat = eta * s with s = sum_t y_t x_t^T x*.
  // Accumulate the quadratic coefficients once and evaluate every eta.
  double acc_ss = 0.0, acc_sy = 0.0, acc_yy = 0.0;
  for (int task = 0; task < n_mc; ++task) {
    auto b = gen_icl_regression(spec, rng, 1, IclVariant::kTrain);
    Matrix s = gd_baseline_predict(spec, b, 1.0);
    const double* y = b.target_at(0, spec.t_context);
    for (int r = 0; r < spec.d_y; ++r) {
      acc_ss += s(0, r) * s(0, r);
      acc_sy += s(0, r) * y[r];
      acc_yy += y[r] * y[r];
    }
  }
  std::vector<double> out;
  out.reserve(etas.size());
  for (double eta : etas)
    out.push_back(0.5 * (acc_yy - 2.0 * eta * acc_sy + eta * eta * acc_ss) / n_mc);
  return out;
}

double gd_baseline_loss(const IclRegressionSpec& spec, double eta, int n_mc, Rng& rng) {
  return gd_baseline_loss_grid(spec, {eta}, n_mc, rng)[0];
}

models::AttentionParams gd_baseline_as_attention(const IclRegressionSpec& spec, double eta) {
  const int d = spec.token_width(), dx = spec.d_x;
  models::AttentionParams p;
  p.w_v = Matrix(d, d);
  p.w_k = Matrix(d, d);
  p.w_q = Matrix(d, d);
  for (int j = dx; j < d; ++j) p.w_v(j, j) = eta;
  for (int j = 0; j < dx; ++j) {
    p.w_k(j, j) = 1.0;
    p.w_q(j, j) = 1.0;
  }
  return p;
}

SequenceBatch gen_assoc_recall(const AssocRecallSpec& spec, Rng& rng, int batch) {
  const int T = spec.t_pairs, v = spec.vocab();
  SequenceBatch b(batch, spec.seq_len(), v, v);
  b.class_targets.assign(static_cast<size_t>(batch) * spec.seq_len(), -1);
  std::vector<int> xs(T), ys(T);
  for (int i = 0; i < batch; ++i) {
    // each x and each y appears exactly once
    for (int t = 0; t < T; ++t) {
      xs[t] = t;
      ys[t] = t;
    }
    for (int t = T - 1; t > 0; --t) {
      std::swap(xs[t], xs[rng.next_u64() % (t + 1)]);
      std::swap(ys[t], ys[rng.next_u64() % (t + 1)]);
    }
    for (int t = 0; t < T; ++t) {
      double* tok = b.input_at(i, t);
      tok[xs[t]] = 1.0;
      tok[T + ys[t]] = 1.0;
    }
    int pick = static_cast<int>(rng.next_u64() % T);
    b.input_at(i, T)[xs[pick]] = 1.0;
    int target_class = T + ys[pick];
    b.target_at(i, T)[target_class] = 1.0;
    b.class_targets[static_cast<size_t>(i) * spec.seq_len() + T] = target_class;
    b.mask[static_cast<size_t>(i) * spec.seq_len() + T] = 1.0;
  }
  return b;
}

models::AttentionParams assoc_recall_analytic_lsa(const AssocRecallSpec& spec) {
  const int T = spec.t_pairs, v = spec.vocab();
  models::AttentionParams p;
  p.w_v = Matrix(v, v);
  p.w_k = Matrix(v, v);
  p.w_q = Matrix(v, v);
  for (int j = 0; j < T; ++j) {
    p.w_k(j, j) = 1.0;
    p.w_q(j, j) = 1.0;
  }
  for (int j = T; j < v; ++j) p.w_v(j, j) = 1.0;
  return p;
}

double recall_accuracy(const models::Outputs& outputs, const SequenceBatch& batch) {
  long correct = 0, total = 0;
  for (int i = 0; i < batch.batch; ++i)
    for (int t = 0; t < batch.seq_len; ++t) {
      if (batch.mask_at(i, t) == 0.0) continue;
      const double* z = outputs.at(i, t);
      int arg = 0;
      for (int j = 1; j < batch.d_out; ++j)
        if (z[j] > z[arg]) arg = j;
      correct += arg == batch.class_targets[static_cast<size_t>(i) * batch.seq_len + t];
      ++total;
    }
  return total ? static_cast<double>(correct) / total : 0.0;
}

}  // namespace linattn::tasks
