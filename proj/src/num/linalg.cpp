#include "linattn/num/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace linattn::num {

namespace {

// Each output row is produced by exactly one thread, so results do not
// depend on the thread count.
constexpr long kParallelFlopThreshold = 1 << 20;

void gemm_nn(int m, int n, int k, double alpha, const double* a, int lda,
             const double* b, int ldb, double* c, int ldc) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > kParallelFlopThreshold)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      double aip = alpha * a[static_cast<size_t>(i) * lda + p];
      const double* bp = b + static_cast<size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_nn(int m, int n, int k, double alpha, const double* a, int lda,
             const double* b, int ldb, double* c, int ldc);

void gemm_nt(int m, int n, int k, double alpha, const double* a, int lda,
             const double* b, int ldb, double* c, int ldc) {
  // For small B the axpy-style NN kernel beats the dot-product form; pay one
  // transpose into scratch.
  if (static_cast<long>(n) * k <= 16384 && m >= 64) {
    static thread_local std::vector<double> scratch;
    scratch.resize(static_cast<size_t>(n) * k);
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        scratch[static_cast<size_t>(p) * n + j] = b[static_cast<size_t>(j) * ldb + p];
    gemm_nn(m, n, k, alpha, a, lda, scratch.data(), n, c, ldc);
    return;
  }
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > kParallelFlopThreshold)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * lda;
    double* ci = c + static_cast<size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * ldb;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += alpha * s;
    }
  }
}

void gemm_tn(int m, int n, int k, double alpha, const double* a, int lda,
             const double* b, int ldb, double* c, int ldc) {
  // a is k x m, b is k x n; stream both row-wise, each thread owns a row
  // block of c.
#ifdef _OPENMP
  bool par = static_cast<long>(m) * n * k > kParallelFlopThreshold;
#pragma omp parallel if (par)
  {
    int nt = omp_get_num_threads();
    int tid = omp_get_thread_num();
    int lo = static_cast<int>(static_cast<long>(m) * tid / nt);
    int hi = static_cast<int>(static_cast<long>(m) * (tid + 1) / nt);
    for (int p = 0; p < k; ++p) {
      const double* ap = a + static_cast<size_t>(p) * lda;
      const double* bp = b + static_cast<size_t>(p) * ldb;
      for (int i = lo; i < hi; ++i) {
        double api = alpha * ap[i];
        double* ci = c + static_cast<size_t>(i) * ldc;
        for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
  }
#else
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<size_t>(p) * lda;
    const double* bp = b + static_cast<size_t>(p) * ldb;
    for (int i = 0; i < m; ++i) {
      double api = alpha * ap[i];
      double* ci = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
#endif
}

void gemm_tt(int m, int n, int k, double alpha, const double* a, int lda,
             const double* b, int ldb, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p)
        s += a[static_cast<size_t>(p) * lda + i] * b[static_cast<size_t>(j) * ldb + p];
      ci[j] += alpha * s;
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    if (beta == 0.0)
      std::fill(ci, ci + n, 0.0);
    else if (beta != 1.0)
      for (int j = 0; j < n; ++j) ci[j] *= beta;
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;
  if (!trans_a && !trans_b)
    gemm_nn(m, n, k, alpha, a, lda, b, ldb, c, ldc);
  else if (!trans_a && trans_b)
    gemm_nt(m, n, k, alpha, a, lda, b, ldb, c, ldc);
  else if (trans_a && !trans_b)
    gemm_tn(m, n, k, alpha, a, lda, b, ldb, c, ldc);
  else
    gemm_tt(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions disagree");
  Matrix c(a.rows, b.cols);
  gemm(false, false, a.rows, b.cols, a.cols, 1.0, a.data.data(), a.cols,
       b.data.data(), b.cols, 0.0, c.data.data(), c.cols);
  return c;
}

std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
  if (a.cols != static_cast<int>(x.size())) throw ShapeError("matvec: shape mismatch");
  std::vector<double> y(a.rows, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* ai = a.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < a.cols; ++j) s += ai[j] * x[j];
    y[i] = s;
  }
  return y;
}

namespace {

// One-sided Jacobi on the columns of b (m x n, m >= n). Returns the
// accumulated right rotations in v.
void jacobi_sweeps(Matrix& b, Matrix& v) {
  const int m = b.rows, n = b.cols;
  const double tol = 1e-15;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          double bp = b(i, p), bq = b(i, q);
          app += bp * bp;
          aqq += bq * bq;
          apq += bp * bq;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        for (int i = 0; i < m; ++i) {
          double bp = b(i, p), bq = b(i, q);
          b(i, p) = cs * bp - sn * bq;
          b(i, q) = sn * bp + cs * bq;
        }
        for (int i = 0; i < n; ++i) {
          double vp = v(i, p), vq = v(i, q);
          v(i, p) = cs * vp - sn * vq;
          v(i, q) = sn * vp + cs * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

SvdResult svd_tall(const Matrix& a) {
  const int m = a.rows, n = a.cols;
  Matrix b = a;
  Matrix v = Matrix::identity(n);
  jacobi_sweeps(b, v);

  std::vector<double> s(n);
  for (int j = 0; j < n; ++j) {
    double norm = 0.0;
    for (int i = 0; i < m; ++i) norm += b(i, j) * b(i, j);
    s[j] = std::sqrt(norm);
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return s[i] > s[j]; });

  SvdResult r;
  r.u = Matrix(m, n);
  r.v = Matrix(n, n);
  r.s.resize(n);
  double smax = n ? s[order[0]] : 0.0;
  for (int jj = 0; jj < n; ++jj) {
    int j = order[jj];
    r.s[jj] = s[j];
    for (int i = 0; i < n; ++i) r.v(i, jj) = v(i, j);
    if (s[j] > smax * 1e-300 && s[j] > 0.0) {
      for (int i = 0; i < m; ++i) r.u(i, jj) = b(i, j) / s[j];
    } else {
      // Null column: complete u with a unit vector orthogonal to the
      // columns already placed.
      for (int cand = 0; cand < m; ++cand) {
        std::vector<double> e(m, 0.0);
        e[cand] = 1.0;
        for (int jp = 0; jp < jj; ++jp) {
          double dot = 0.0;
          for (int i = 0; i < m; ++i) dot += e[i] * r.u(i, jp);
          for (int i = 0; i < m; ++i) e[i] -= dot * r.u(i, jp);
        }
        double norm = 0.0;
        for (double x : e) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 0.5) {
          for (int i = 0; i < m; ++i) r.u(i, jj) = e[i] / norm;
          break;
        }
      }
    }
  }
  return r;
}

}  // namespace

SvdResult svd(const Matrix& a) {
  if (a.rows >= a.cols) return svd_tall(a);
  SvdResult t = svd_tall(a.transposed());
  return SvdResult{std::move(t.v), std::move(t.s), std::move(t.u)};
}

LstsqResult least_squares(const Matrix& a, const Matrix& b) {
  if (a.rows < 1) throw ShapeError("least_squares: a must have at least one row");
  if (a.rows != b.rows) throw ShapeError("least_squares: a and b row counts disagree");
  SvdResult dec = svd(a);
  const int k = static_cast<int>(dec.s.size());
  double smax = k ? dec.s[0] : 0.0;
  double rcond = 1e-12 * smax;

  // x = V diag(1/s) U^T b over the numerically nonzero spectrum.
  Matrix utb = matmul(dec.u.transposed(), b);
  for (int i = 0; i < k; ++i) {
    double inv = dec.s[i] > rcond ? 1.0 / dec.s[i] : 0.0;
    for (int j = 0; j < utb.cols; ++j) utb(i, j) *= inv;
  }
  LstsqResult res;
  res.x = matmul(dec.v, utb);

  Matrix fit = matmul(a, res.x);
  res.r2.resize(b.cols);
  for (int j = 0; j < b.cols; ++j) {
    double mean = 0.0;
    for (int i = 0; i < b.rows; ++i) mean += b(i, j);
    mean /= b.rows;
    double rss = 0.0, tss = 0.0, scale = 0.0;
    for (int i = 0; i < b.rows; ++i) {
      double r = fit(i, j) - b(i, j);
      rss += r * r;
      double d = b(i, j) - mean;
      tss += d * d;
      scale += b(i, j) * b(i, j);
    }
    if (tss > 0.0) {
      res.r2[j] = 1.0 - rss / tss;
    } else {
      // Constant target: call it explained only if the residual vanishes.
      res.r2[j] = rss <= 1e-16 * (1.0 + scale) ? 1.0 : 0.0;
    }
  }
  return res;
}

InverseResult inverse(const Matrix& a) {
  if (a.rows != a.cols) throw ShapeError("inverse: matrix must be square");
  SvdResult dec = svd(a);
  const int n = a.rows;
  double smax = dec.s.empty() ? 0.0 : dec.s[0];
  double smin = dec.s.empty() ? 0.0 : dec.s[n - 1];
  if (smax == 0.0 || smin / smax < 1e-12)
    throw SingularMatrixError("inverse: matrix is singular to tolerance");
  Matrix vs = dec.v;  // V diag(1/s)
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) vs(i, j) /= dec.s[j];
  return InverseResult{matmul(vs, dec.u.transposed()), smax / smin};
}

}  // namespace linattn::num
