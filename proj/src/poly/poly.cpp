#include "linattn/poly/poly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace linattn::poly {

Polynomial Polynomial::constant(int nvars, double c) {
  Polynomial p(nvars);
  p.add_term(Exponents(nvars, 0), c);
  return p;
}

Polynomial Polynomial::variable(int nvars, int index) {
  Polynomial p(nvars);
  Exponents e(nvars, 0);
  e[index] = 1;
  p.add_term(e, 1.0);
  return p;
}

Polynomial Polynomial::linear(const std::vector<double>& coeffs, double c0) {
  Polynomial p(static_cast<int>(coeffs.size()));
  if (c0 != 0.0) p.add_term(Exponents(p.nvars_, 0), c0);
  for (int i = 0; i < p.nvars_; ++i) {
    Exponents e(p.nvars_, 0);
    e[i] = 1;
    p.add_term(e, coeffs[i]);
  }
  return p;
}

int Polynomial::degree() const {
  int d = 0;
  for (const auto& [e, c] : terms_)
    d = std::max(d, std::accumulate(e.begin(), e.end(), 0));
  return d;
}

void Polynomial::add_term(const Exponents& e, double c) {
  if (static_cast<int>(e.size()) != nvars_)
    throw ShapeError("Polynomial: exponent vector length != nvars");
  auto it = terms_.find(e);
  if (it == terms_.end()) {
    if (std::abs(c) > kPruneThreshold) terms_.emplace(e, c);
  } else {
    it->second += c;
    if (std::abs(it->second) <= kPruneThreshold) terms_.erase(it);
  }
}

double Polynomial::coefficient(const Exponents& e) const {
  auto it = terms_.find(e);
  return it == terms_.end() ? 0.0 : it->second;
}

double Polynomial::eval(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != nvars_)
    throw ShapeError("Polynomial::eval: wrong input length");
  double total = 0.0;
  for (const auto& [e, c] : terms_) {
    double t = c;
    for (int i = 0; i < nvars_; ++i)
      for (int k = 0; k < e[i]; ++k) t *= x[i];
    total += t;
  }
  return total;
}

Polynomial Polynomial::substitute(int index, double value) const {
  Polynomial out(nvars_ - 1);
  for (const auto& [e, c] : terms_) {
    double coef = c;
    for (int k = 0; k < e[index]; ++k) coef *= value;
    Exponents reduced;
    reduced.reserve(nvars_ - 1);
    for (int i = 0; i < nvars_; ++i)
      if (i != index) reduced.push_back(e[i]);
    out.add_term(reduced, coef);
  }
  return out;
}

Polynomial& Polynomial::operator+=(const Polynomial& o) {
  if (nvars_ != o.nvars_) throw ShapeError("Polynomial add: nvars mismatch");
  for (const auto& [e, c] : o.terms_) add_term(e, c);
  return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& o) {
  if (nvars_ != o.nvars_) throw ShapeError("Polynomial sub: nvars mismatch");
  for (const auto& [e, c] : o.terms_) add_term(e, -c);
  return *this;
}

Polynomial& Polynomial::operator*=(double s) {
  for (auto& [e, c] : terms_) c *= s;
  prune();
  return *this;
}

void Polynomial::prune() {
  for (auto it = terms_.begin(); it != terms_.end();) {
    if (std::abs(it->second) <= kPruneThreshold)
      it = terms_.erase(it);
    else
      ++it;
  }
}

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
  if (a.nvars_ != b.nvars_) throw ShapeError("Polynomial mul: nvars mismatch");
  Polynomial out(a.nvars_);
  Exponents e(a.nvars_);
  for (const auto& [ea, ca] : a.terms_) {
    for (const auto& [eb, cb] : b.terms_) {
      for (int i = 0; i < a.nvars_; ++i) e[i] = ea[i] + eb[i];
      out.add_term(e, ca * cb);
    }
  }
  return out;
}

std::string Polynomial::to_string() const {
  if (terms_.empty()) return "0";
  std::ostringstream os;
  bool first = true;
  for (const auto& [e, c] : terms_) {
    if (!first) os << " + ";
    first = false;
    os << c;
    for (int i = 0; i < nvars_; ++i)
      if (e[i] > 0) {
        os << "*x" << i;
        if (e[i] > 1) os << "^" << e[i];
      }
  }
  return os.str();
}

int PolyVector::degree() const {
  int d = 0;
  for (const auto& p : components) d = std::max(d, p.degree());
  return d;
}

PolyVector PolyVector::substitute(int index, double value) const {
  PolyVector out;
  out.components.reserve(components.size());
  for (const auto& p : components) out.components.push_back(p.substitute(index, value));
  return out;
}

Polynomial poly_add(const Polynomial& a, const Polynomial& b) { return a + b; }
Polynomial poly_mul(const Polynomial& a, const Polynomial& b) { return a * b; }
Polynomial poly_scale(const Polynomial& a, double s) { return a * s; }
double poly_eval(const Polynomial& p, const std::vector<double>& x) { return p.eval(x); }

PolyVector poly_linear_combine(const num::Matrix& weights, const PolyVector& polys) {
  if (weights.cols != polys.size())
    throw ShapeError("poly_linear_combine: weight columns != number of polynomials");
  PolyVector out;
  out.components.reserve(weights.rows);
  for (int i = 0; i < weights.rows; ++i) {
    Polynomial acc(polys.nvars());
    for (int j = 0; j < weights.cols; ++j) {
      if (weights(i, j) != 0.0) acc += polys.components[j] * weights(i, j);
    }
    out.components.push_back(std::move(acc));
  }
  return out;
}

namespace {

void enumerate_grlex(int nvars, int degree, int pos, int remaining, Exponents& cur,
                     std::vector<Exponents>& out) {
  if (pos == nvars - 1) {
    cur[pos] = remaining;
    out.push_back(cur);
    return;
  }
  // Lexicographic within a degree class: larger exponent on earlier
  // variables first.
  for (int e = remaining; e >= 0; --e) {
    cur[pos] = e;
    enumerate_grlex(nvars, degree, pos + 1, remaining - e, cur, out);
  }
  cur[pos] = 0;
}

}  // namespace

std::vector<Exponents> monomials_up_to_degree(int nvars, int max_degree) {
  std::vector<Exponents> out;
  if (nvars == 0) {
    out.push_back({});
    return out;
  }
  Exponents cur(nvars, 0);
  for (int d = 0; d <= max_degree; ++d) enumerate_grlex(nvars, d, 0, d, cur, out);
  return out;
}

std::vector<double> dense_coefficients(const Polynomial& p, int max_degree) {
  auto monos = monomials_up_to_degree(p.nvars(), max_degree);
  std::vector<double> c(monos.size(), 0.0);
  for (size_t i = 0; i < monos.size(); ++i) c[i] = p.coefficient(monos[i]);
  return c;
}

double coefficient_distance(const PolyVector& p, const PolyVector& q, int max_degree,
                            double overflow_tol) {
  if (p.nvars() != q.nvars()) throw ShapeError("coefficient_distance: nvars mismatch");
  if (p.size() != q.size())
    throw ShapeError("coefficient_distance: output counts differ");
  for (const PolyVector* pv : {&p, &q}) {
    for (const auto& comp : pv->components) {
      for (const auto& [e, c] : comp.terms()) {
        int deg = std::accumulate(e.begin(), e.end(), 0);
        if (deg > max_degree && std::abs(c) > overflow_tol)
          throw Error("coefficient_distance: coefficients above max_degree exceed tolerance");
      }
    }
  }
  constexpr double kEps = 1e-30;
  double total = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    auto cp = dense_coefficients(p.components[i], max_degree);
    auto cq = dense_coefficients(q.components[i], max_degree);
    double diff = 0.0, np = 0.0, nq = 0.0;
    for (size_t j = 0; j < cp.size(); ++j) {
      double d = cp[j] - cq[j];
      diff += d * d;
      np += cp[j] * cp[j];
      nq += cq[j] * cq[j];
    }
    total += std::sqrt(diff) / std::max({std::sqrt(np), std::sqrt(nq), kEps});
  }
  return total / p.size();
}

std::string poly_to_json(const Polynomial& p) {
  nlohmann::json j;
  j["nvars"] = p.nvars();
  j["terms"] = nlohmann::json::array();
  for (const auto& [e, c] : p.terms()) {
    j["terms"].push_back({{"exp", e}, {"coef", c}});
  }
  return j.dump();
}

Polynomial poly_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Polynomial p(j.at("nvars").get<int>());
  for (const auto& t : j.at("terms")) {
    p.add_term(t.at("exp").get<Exponents>(), t.at("coef").get<double>());
  }
  return p;
}

}  // namespace linattn::poly
