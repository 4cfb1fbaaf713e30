#pragma once

#include <numeric>
#include <vector>

#include "linattn/error.hpp"
#include "linattn/num/matrix.hpp"

namespace linattn::grad {

// Dense real-64 tensor, row-major, rank <= 3 in practice. Any tensor can be
// viewed as 2-D by flattening the leading dimensions.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<long>(data.size()) != numel_of(shape))
      throw ShapeError("Tensor: data size does not match shape");
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  int rows() const { return cols() ? static_cast<int>(numel() / cols()) : 0; }

  static Tensor from_matrix(const num::Matrix& m) {
    return Tensor({m.rows, m.cols}, m.data);
  }
  static Tensor from_vector(const std::vector<double>& v) {
    return Tensor({static_cast<int>(v.size())}, v);
  }
  num::Matrix to_matrix() const {
    return num::Matrix(rows(), cols(), data);
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Ordered parameter collection; iteration order is the registration order,
// which keeps optimizer updates and gradient reductions deterministic.
using ParamSet = std::vector<std::pair<std::string, Tensor>>;

inline Tensor* find_param(ParamSet& params, const std::string& name) {
  for (auto& [k, v] : params)
    if (k == name) return &v;
  return nullptr;
}

inline const Tensor* find_param(const ParamSet& params, const std::string& name) {
  for (const auto& [k, v] : params)
    if (k == name) return &v;
  return nullptr;
}

}  // namespace linattn::grad
