#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "linattn/grad/tensor.hpp"

namespace linattn::grad {

class Graph;

struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {

struct Node {
  std::vector<int> inputs;
  Tensor out;
  virtual ~Node() = default;
  // Accumulate input gradients given the output gradient.
  virtual void backward(Graph& g, const Tensor& gout) = 0;
};

}  // namespace detail

// Define-by-run reverse-mode tape. Values are immutable once recorded;
// gradients accumulate additively at fan-out. Replaying the same program on
// the same inputs yields bit-identical values and gradients.
class Graph {
 public:
  Value param(const std::string& name, const Tensor& t);
  Value constant(Tensor t);

  // C = op(A) . op(B), 2-D views.
  Value matmul(Value a, Value b, bool trans_a = false, bool trans_b = false);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double s);
  Value add_row_bias(Value x, Value bias);   // bias has length cols(x)
  Value mul_row_vec(Value x, Value v);       // v has length cols(x)
  Value sigmoid(Value x);
  Value sat_sigmoid(Value x);  // literal 0/1 beyond |z| >= 37
  Value tanh_(Value x);
  Value exp_(Value x);
  Value neg(Value x);
  Value sin_(Value x);
  Value cos_(Value x);
  Value reshape(Value x, std::vector<int> shape);
  Value slice_cols(Value x, int begin, int end);
  Value time_slice(Value x, int t);                 // (B,T,d) -> (B,d)
  Value stack_time(const std::vector<Value>& xs);   // T x (B,d) -> (B,T,d)

  // h_t = lambda . h_{t-1} + u_t; u is (B*T, n) row-major over (batch, time).
  Value diag_scan(Value lambda, Value u, int batch, int seq_len);
  // h_t = h_{t-1} A^T + u_t (dense recurrence, A is n x n).
  Value dense_scan(Value a, Value u, int batch, int seq_len);
  // Complex diagonal scan on split re/im parts; output (B*T, 2n), re then im.
  Value complex_diag_scan(Value lam_re, Value lam_im, Value u_re, Value u_im, int batch,
                          int seq_len);

  // sum_r mask_r * 0.5 ||pred_r - target_r||^2 / sum_r mask_r  (scalar)
  Value masked_mse(Value pred, Value target, Value mask);
  // sum_r mask_r * (logsumexp(z_r) - z_r[class_r]) / sum_r mask_r
  Value masked_xent(Value logits, std::vector<int> classes, Value mask);

  const Tensor& value(Value v) const;

  // Reverse pass from a scalar; returns gradients for all named params.
  std::map<std::string, Tensor> backward(Value loss);

  // internal, used by node backward implementations
  void accumulate(int id, const Tensor& g);
  void accumulate_scaled(int id, const double* data, long n, double s);
  Tensor& grad_slot(int id);
  const Tensor& node_out(int id) const { return nodes_[id]->out; }

 private:
  Value emit(std::unique_ptr<detail::Node> node);

  std::vector<std::unique_ptr<detail::Node>> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<std::string, int>> params_;
};

// Builds the loss from registered parameter values; used by value_and_grad.
using LossBuilder = std::function<Value(Graph&, const std::map<std::string, Value>&)>;

struct ValueAndGrad {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};

ValueAndGrad value_and_grad(const LossBuilder& builder, const ParamSet& params);

}  // namespace linattn::grad
