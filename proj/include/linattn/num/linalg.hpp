#pragma once

#include <vector>

#include "linattn/num/matrix.hpp"

namespace linattn::num {

// C = alpha * op(A) * op(B) + beta * C, row-major. The one kernel every
// matrix product in the project goes through.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

Matrix matmul(const Matrix& a, const Matrix& b);

// y = A x for a column vector x.
std::vector<double> matvec(const Matrix& a, const std::vector<double>& x);

struct SvdResult {
  Matrix u;                // rows x k, orthonormal columns
  std::vector<double> s;   // k singular values, descending
  Matrix v;                // cols x k, orthonormal columns
};

// One-sided Jacobi SVD. Sized for the small dense matrices used here.
SvdResult svd(const Matrix& a);

struct LstsqResult {
  Matrix x;                // argmin ||a x - b||^2 (minimum-norm if rank-deficient)
  std::vector<double> r2;  // per target column: 1 - RSS/TSS.
                           // Zero-variance targets: 1 if the residual is ~zero, else 0.
};

LstsqResult least_squares(const Matrix& a, const Matrix& b);

struct InverseResult {
  Matrix inv;
  double cond;  // sigma_max / sigma_min
};

// Throws SingularMatrixError when sigma_min / sigma_max < 1e-12.
InverseResult inverse(const Matrix& a);

}  // namespace linattn::num
