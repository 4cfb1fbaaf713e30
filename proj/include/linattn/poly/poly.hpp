#pragma once

#include <map>
#include <string>
#include <vector>

#include "linattn/error.hpp"
#include "linattn/num/matrix.hpp"

namespace linattn::poly {

using Exponents = std::vector<int>;

// Sparse multivariate polynomial with real-64 coefficients. Terms whose
// coefficient falls below kPruneThreshold are dropped on normalization so
// exactly-cancelling arithmetic stays sparse.
class Polynomial {
 public:
  static constexpr double kPruneThreshold = 1e-12;

  Polynomial() = default;
  explicit Polynomial(int nvars) : nvars_(nvars) {}

  static Polynomial constant(int nvars, double c);
  // x_i as a polynomial.
  static Polynomial variable(int nvars, int index);
  // c0 + sum_i coeffs[i] x_i.
  static Polynomial linear(const std::vector<double>& coeffs, double c0 = 0.0);

  int nvars() const { return nvars_; }
  const std::map<Exponents, double>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }
  int degree() const;

  void add_term(const Exponents& e, double c);
  double coefficient(const Exponents& e) const;

  double eval(const std::vector<double>& x) const;

  // Fix x_index := value, producing a polynomial in nvars-1 variables.
  Polynomial substitute(int index, double value) const;

  Polynomial& operator+=(const Polynomial& o);
  Polynomial& operator-=(const Polynomial& o);
  Polynomial& operator*=(double s);

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b);

  std::string to_string() const;

 private:
  void prune();

  int nvars_ = 0;
  std::map<Exponents, double> terms_;
};

// One polynomial per network output unit.
struct PolyVector {
  std::vector<Polynomial> components;

  int nvars() const { return components.empty() ? 0 : components[0].nvars(); }
  int size() const { return static_cast<int>(components.size()); }
  int degree() const;
  PolyVector substitute(int index, double value) const;
};

Polynomial poly_add(const Polynomial& a, const Polynomial& b);
Polynomial poly_mul(const Polynomial& a, const Polynomial& b);
Polynomial poly_scale(const Polynomial& a, double s);
double poly_eval(const Polynomial& p, const std::vector<double>& x);

// weights is (rows x polys.size()); output component i = sum_j w_ij polys_j.
PolyVector poly_linear_combine(const num::Matrix& weights, const PolyVector& polys);

// All monomial exponent vectors with total degree <= max_degree, in graded
// lexicographic order. Length is C(nvars + max_degree, max_degree).
std::vector<Exponents> monomials_up_to_degree(int nvars, int max_degree);

// Coefficients of p over monomials_up_to_degree(nvars, max_degree).
std::vector<double> dense_coefficients(const Polynomial& p, int max_degree);

// Mean over output units of ||c_p - c_q|| / max(||c_p||, ||c_q||, eps) on
// dense degree-<=max_degree coefficient vectors. Throws if either argument
// carries non-negligible coefficients above max_degree.
double coefficient_distance(const PolyVector& p, const PolyVector& q, int max_degree,
                            double overflow_tol = 1e-10);

std::string poly_to_json(const Polynomial& p);
Polynomial poly_from_json(const std::string& text);

}  // namespace linattn::poly
