#include "linattn/grad/graph.hpp"

#include <algorithm>
#include <cmath>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "linattn/num/linalg.hpp"

namespace linattn::grad {

using detail::Node;

namespace {

constexpr double kStateOverflow = 1e12;

// The tape allocates and frees hundreds of multi-hundred-KB buffers per
// training iteration. Keeping those on the heap freelist instead of mmap
// avoids page-fault churn on every step.
#ifdef __GLIBC__
const bool kArenaTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 26);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

struct LeafNode final : Node {
  void backward(Graph&, const Tensor&) override {}
};

struct MatMulNode final : Node {
  bool ta, tb;
  MatMulNode(bool a, bool b) : ta(a), tb(b) {}
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& a = g.node_out(inputs[0]);
    const Tensor& b = g.node_out(inputs[1]);
    Tensor& da = g.grad_slot(inputs[0]);
    Tensor& db = g.grad_slot(inputs[1]);
    const int m = gout.rows(), n = gout.cols();
    const int k = ta ? a.rows() : a.cols();
    const double* A = a.data.data();
    const double* B = b.data.data();
    const double* G = gout.data.data();
    const int lda = a.cols(), ldb = b.cols();
    if (!ta && !tb) {
      num::gemm(false, true, m, k, n, 1.0, G, n, B, ldb, 1.0, da.data.data(), k);
      num::gemm(true, false, k, n, m, 1.0, A, lda, G, n, 1.0, db.data.data(), n);
    } else if (!ta && tb) {
      num::gemm(false, false, m, k, n, 1.0, G, n, B, ldb, 1.0, da.data.data(), k);
      num::gemm(true, false, n, k, m, 1.0, G, n, A, lda, 1.0, db.data.data(), k);
    } else if (ta && !tb) {
      num::gemm(false, true, k, m, n, 1.0, B, ldb, G, n, 1.0, da.data.data(), m);
      num::gemm(false, false, k, n, m, 1.0, A, lda, G, n, 1.0, db.data.data(), n);
    } else {
      num::gemm(true, true, k, m, n, 1.0, B, ldb, G, n, 1.0, da.data.data(), m);
      num::gemm(true, true, n, k, m, 1.0, G, n, A, lda, 1.0, db.data.data(), k);
    }
  }
};

struct AddNode final : Node {
  void backward(Graph& g, const Tensor& gout) override {
    g.accumulate(inputs[0], gout);
    g.accumulate(inputs[1], gout);
  }
};

struct SubNode final : Node {
  void backward(Graph& g, const Tensor& gout) override {
    g.accumulate(inputs[0], gout);
    g.accumulate_scaled(inputs[1], gout.data.data(), gout.numel(), -1.0);
  }
};

struct MulNode final : Node {
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& a = g.node_out(inputs[0]);
    const Tensor& b = g.node_out(inputs[1]);
    Tensor& da = g.grad_slot(inputs[0]);
    Tensor& db = g.grad_slot(inputs[1]);
    for (long i = 0; i < gout.numel(); ++i) {
      da.data[i] += gout.data[i] * b.data[i];
      db.data[i] += gout.data[i] * a.data[i];
    }
  }
};

struct ScaleNode final : Node {
  double s;
  explicit ScaleNode(double s_) : s(s_) {}
  void backward(Graph& g, const Tensor& gout) override {
    g.accumulate_scaled(inputs[0], gout.data.data(), gout.numel(), s);
  }
};

struct AddRowBiasNode final : Node {
  void backward(Graph& g, const Tensor& gout) override {
    g.accumulate(inputs[0], gout);
    Tensor& db = g.grad_slot(inputs[1]);
    const int r = gout.rows(), c = gout.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) db.data[j] += gout.data[static_cast<size_t>(i) * c + j];
  }
};

struct MulRowVecNode final : Node {
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& x = g.node_out(inputs[0]);
    const Tensor& v = g.node_out(inputs[1]);
    Tensor& dx = g.grad_slot(inputs[0]);
    Tensor& dv = g.grad_slot(inputs[1]);
    const int r = gout.rows(), c = gout.cols();
    for (int i = 0; i < r; ++i) {
      const double* go = gout.data.data() + static_cast<size_t>(i) * c;
      const double* xi = x.data.data() + static_cast<size_t>(i) * c;
      double* dxi = dx.data.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        dxi[j] += go[j] * v.data[j];
        dv.data[j] += go[j] * xi[j];
      }
    }
  }
};

enum class UnaryKind { kSigmoid, kSatSigmoid, kTanh, kExp, kNeg, kSin, kCos };

struct UnaryNode final : Node {
  UnaryKind kind;
  explicit UnaryNode(UnaryKind k) : kind(k) {}
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& x = g.node_out(inputs[0]);
    Tensor& dx = g.grad_slot(inputs[0]);
    for (long i = 0; i < gout.numel(); ++i) {
      double d = 0.0;
      switch (kind) {
        case UnaryKind::kSigmoid: {
          double y = out.data[i];
          d = y * (1.0 - y);
          break;
        }
        case UnaryKind::kSatSigmoid: {
          double z = x.data[i];
          if (std::abs(z) >= 37.0) {
            d = 0.0;
          } else {
            double y = out.data[i];
            d = y * (1.0 - y);
          }
          break;
        }
        case UnaryKind::kTanh: {
          double y = out.data[i];
          d = 1.0 - y * y;
          break;
        }
        case UnaryKind::kExp:
          d = out.data[i];
          break;
        case UnaryKind::kNeg:
          d = -1.0;
          break;
        case UnaryKind::kSin:
          d = std::cos(x.data[i]);
          break;
        case UnaryKind::kCos:
          d = -std::sin(x.data[i]);
          break;
      }
      dx.data[i] += gout.data[i] * d;
    }
  }
};

struct ReshapeNode final : Node {
  void backward(Graph& g, const Tensor& gout) override {
    g.accumulate_scaled(inputs[0], gout.data.data(), gout.numel(), 1.0);
  }
};

struct SliceColsNode final : Node {
  int begin;
  explicit SliceColsNode(int b) : begin(b) {}
  void backward(Graph& g, const Tensor& gout) override {
    Tensor& dx = g.grad_slot(inputs[0]);
    const int rows = gout.rows(), c = gout.cols();
    const int xc = dx.cols();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < c; ++j)
        dx.data[static_cast<size_t>(i) * xc + begin + j] +=
            gout.data[static_cast<size_t>(i) * c + j];
  }
};

struct TimeSliceNode final : Node {
  int t;
  explicit TimeSliceNode(int t_) : t(t_) {}
  void backward(Graph& g, const Tensor& gout) override {
    Tensor& dx = g.grad_slot(inputs[0]);
    const int b = dx.shape[0], seq = dx.shape[1], d = dx.shape[2];
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < d; ++j)
        dx.data[(static_cast<size_t>(i) * seq + t) * d + j] +=
            gout.data[static_cast<size_t>(i) * d + j];
  }
};

struct StackTimeNode final : Node {
  void backward(Graph& g, const Tensor& gout) override {
    const int seq = static_cast<int>(inputs.size());
    const int b = out.shape[0], d = out.shape[2];
    for (int t = 0; t < seq; ++t) {
      Tensor& dx = g.grad_slot(inputs[t]);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < d; ++j)
          dx.data[static_cast<size_t>(i) * d + j] +=
              gout.data[(static_cast<size_t>(i) * seq + t) * d + j];
    }
  }
};

struct DiagScanNode final : Node {
  int b = 0, seq = 0;
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& lam = g.node_out(inputs[0]);
    Tensor& dlam = g.grad_slot(inputs[0]);
    Tensor& du = g.grad_slot(inputs[1]);
    const int n = out.cols();
    std::vector<double> adj(n);
    for (int i = 0; i < b; ++i) {
      std::fill(adj.begin(), adj.end(), 0.0);
      for (int t = seq - 1; t >= 0; --t) {
        const size_t off = (static_cast<size_t>(i) * seq + t) * n;
        for (int j = 0; j < n; ++j) {
          adj[j] = gout.data[off + j] + lam.data[j] * adj[j];
          du.data[off + j] += adj[j];
          if (t > 0) dlam.data[j] += adj[j] * out.data[off - n + j];
        }
      }
    }
  }
};

struct DenseScanNode final : Node {
  int b = 0, seq = 0;
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& a = g.node_out(inputs[0]);
    Tensor& da = g.grad_slot(inputs[0]);
    Tensor& du = g.grad_slot(inputs[1]);
    const int n = out.cols();
    std::vector<double> adj(n), nxt(n);
    for (int i = 0; i < b; ++i) {
      std::fill(nxt.begin(), nxt.end(), 0.0);
      for (int t = seq - 1; t >= 0; --t) {
        const size_t off = (static_cast<size_t>(i) * seq + t) * n;
        // adj_t = dH_t + adj_{t+1} A
        for (int j = 0; j < n; ++j) {
          double s = gout.data[off + j];
          for (int r = 0; r < n; ++r) s += nxt[r] * a.data[static_cast<size_t>(r) * n + j];
          adj[j] = s;
        }
        for (int j = 0; j < n; ++j) du.data[off + j] += adj[j];
        if (t > 0) {
          const double* hprev = out.data.data() + off - n;
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < n; ++j)
              da.data[static_cast<size_t>(r) * n + j] += adj[r] * hprev[j];
        }
        std::swap(adj, nxt);
      }
    }
  }
};

struct ComplexDiagScanNode final : Node {
  int b = 0, seq = 0;
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& lre = g.node_out(inputs[0]);
    const Tensor& lim = g.node_out(inputs[1]);
    Tensor& dlre = g.grad_slot(inputs[0]);
    Tensor& dlim = g.grad_slot(inputs[1]);
    Tensor& dure = g.grad_slot(inputs[2]);
    Tensor& duim = g.grad_slot(inputs[3]);
    const int n = out.cols() / 2;
    std::vector<double> are(n), aim(n);
    for (int i = 0; i < b; ++i) {
      std::fill(are.begin(), are.end(), 0.0);
      std::fill(aim.begin(), aim.end(), 0.0);
      for (int t = seq - 1; t >= 0; --t) {
        const size_t off2 = (static_cast<size_t>(i) * seq + t) * 2 * n;
        const size_t off1 = (static_cast<size_t>(i) * seq + t) * n;
        for (int j = 0; j < n; ++j) {
          double lr = lre.data[j], li = lim.data[j];
          double gre = gout.data[off2 + j] + lr * are[j] + li * aim[j];
          double gim = gout.data[off2 + n + j] - li * are[j] + lr * aim[j];
          are[j] = gre;
          aim[j] = gim;
          dure.data[off1 + j] += gre;
          duim.data[off1 + j] += gim;
          if (t > 0) {
            double hre = out.data[off2 - 2 * n + j];
            double him = out.data[off2 - 2 * n + n + j];
            dlre.data[j] += gre * hre + gim * him;
            dlim.data[j] += -gre * him + gim * hre;
          }
        }
      }
    }
  }
};

struct MaskedMseNode final : Node {
  double inv_count = 0.0;
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& pred = g.node_out(inputs[0]);
    const Tensor& target = g.node_out(inputs[1]);
    const Tensor& mask = g.node_out(inputs[2]);
    Tensor& dp = g.grad_slot(inputs[0]);
    const int r = pred.rows(), c = pred.cols();
    const double go = gout.data[0];
    for (int i = 0; i < r; ++i) {
      double m = mask.data[i];
      if (m == 0.0) continue;
      const size_t off = static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j)
        dp.data[off + j] += go * m * inv_count * (pred.data[off + j] - target.data[off + j]);
    }
  }
};

struct MaskedXentNode final : Node {
  std::vector<int> classes;
  double inv_count = 0.0;
  void backward(Graph& g, const Tensor& gout) override {
    const Tensor& logits = g.node_out(inputs[0]);
    const Tensor& mask = g.node_out(inputs[1]);
    Tensor& dz = g.grad_slot(inputs[0]);
    const int r = logits.rows(), c = logits.cols();
    const double go = gout.data[0];
    std::vector<double> p(c);
    for (int i = 0; i < r; ++i) {
      double m = mask.data[i];
      if (m == 0.0) continue;
      const size_t off = static_cast<size_t>(i) * c;
      double zmax = logits.data[off];
      for (int j = 1; j < c; ++j) zmax = std::max(zmax, logits.data[off + j]);
      double sum = 0.0;
      for (int j = 0; j < c; ++j) {
        p[j] = std::exp(logits.data[off + j] - zmax);
        sum += p[j];
      }
      for (int j = 0; j < c; ++j)
        dz.data[off + j] +=
            go * m * inv_count * (p[j] / sum - (j == classes[i] ? 1.0 : 0.0));
    }
  }
};

}  // namespace

Value Graph::emit(std::unique_ptr<Node> node) {
  nodes_.push_back(std::move(node));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::param(const std::string& name, const Tensor& t) {
  auto node = std::make_unique<LeafNode>();
  node->out = t;
  Value v = emit(std::move(node));
  params_.emplace_back(name, v.id);
  return v;
}

Value Graph::constant(Tensor t) {
  auto node = std::make_unique<LeafNode>();
  node->out = std::move(t);
  return emit(std::move(node));
}

const Tensor& Graph::value(Value v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw Error("Graph::value: invalid value handle");
  return nodes_[v.id]->out;
}

Value Graph::matmul(Value a, Value b, bool trans_a, bool trans_b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  int m = trans_a ? ta.cols() : ta.rows();
  int ka = trans_a ? ta.rows() : ta.cols();
  int kb = trans_b ? tb.cols() : tb.rows();
  int n = trans_b ? tb.rows() : tb.cols();
  if (ka != kb) throw ShapeError("Graph::matmul: inner dimensions disagree");
  auto node = std::make_unique<MatMulNode>(trans_a, trans_b);
  node->inputs = {a.id, b.id};
  node->out = Tensor({m, n});
  num::gemm(trans_a, trans_b, m, n, ka, 1.0, ta.data.data(), ta.cols(), tb.data.data(),
            tb.cols(), 0.0, node->out.data.data(), n);
  return emit(std::move(node));
}

namespace {

template <class NodeT, class Fn>
std::unique_ptr<NodeT> binary_elementwise(const Tensor& a, const Tensor& b, Fn fn) {
  if (a.numel() != b.numel()) throw ShapeError("Graph: elementwise shape mismatch");
  auto node = std::make_unique<NodeT>();
  node->out = Tensor(a.shape);
  for (long i = 0; i < a.numel(); ++i) node->out.data[i] = fn(a.data[i], b.data[i]);
  return node;
}

}  // namespace

Value Graph::add(Value a, Value b) {
  auto node = binary_elementwise<AddNode>(value(a), value(b),
                                          [](double x, double y) { return x + y; });
  node->inputs = {a.id, b.id};
  return emit(std::move(node));
}

Value Graph::sub(Value a, Value b) {
  auto node = binary_elementwise<SubNode>(value(a), value(b),
                                          [](double x, double y) { return x - y; });
  node->inputs = {a.id, b.id};
  return emit(std::move(node));
}

Value Graph::mul(Value a, Value b) {
  auto node = binary_elementwise<MulNode>(value(a), value(b),
                                          [](double x, double y) { return x * y; });
  node->inputs = {a.id, b.id};
  return emit(std::move(node));
}

Value Graph::scale(Value a, double s) {
  auto node = std::make_unique<ScaleNode>(s);
  node->inputs = {a.id};
  node->out = Tensor(value(a).shape);
  for (long i = 0; i < node->out.numel(); ++i) node->out.data[i] = s * value(a).data[i];
  return emit(std::move(node));
}

Value Graph::add_row_bias(Value x, Value bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  if (tb.numel() != tx.cols()) throw ShapeError("add_row_bias: bias length != cols");
  auto node = std::make_unique<AddRowBiasNode>();
  node->inputs = {x.id, bias.id};
  node->out = Tensor(tx.shape);
  const int r = tx.rows(), c = tx.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      node->out.data[static_cast<size_t>(i) * c + j] =
          tx.data[static_cast<size_t>(i) * c + j] + tb.data[j];
  return emit(std::move(node));
}

Value Graph::mul_row_vec(Value x, Value v) {
  const Tensor& tx = value(x);
  const Tensor& tv = value(v);
  if (tv.numel() != tx.cols()) throw ShapeError("mul_row_vec: vector length != cols");
  auto node = std::make_unique<MulRowVecNode>();
  node->inputs = {x.id, v.id};
  node->out = Tensor(tx.shape);
  const int r = tx.rows(), c = tx.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      node->out.data[static_cast<size_t>(i) * c + j] =
          tx.data[static_cast<size_t>(i) * c + j] * tv.data[j];
  return emit(std::move(node));
}

Value Graph::sigmoid(Value x) {
  auto node = std::make_unique<UnaryNode>(UnaryKind::kSigmoid);
  node->inputs = {x.id};
  node->out = Tensor(value(x).shape);
  for (long i = 0; i < node->out.numel(); ++i)
    node->out.data[i] = sigmoid_scalar(value(x).data[i]);
  return emit(std::move(node));
}

Value Graph::sat_sigmoid(Value x) {
  auto node = std::make_unique<UnaryNode>(UnaryKind::kSatSigmoid);
  node->inputs = {x.id};
  node->out = Tensor(value(x).shape);
  for (long i = 0; i < node->out.numel(); ++i) {
    double z = value(x).data[i];
    node->out.data[i] = z >= 37.0 ? 1.0 : (z <= -37.0 ? 0.0 : sigmoid_scalar(z));
  }
  return emit(std::move(node));
}

Value Graph::tanh_(Value x) {
  auto node = std::make_unique<UnaryNode>(UnaryKind::kTanh);
  node->inputs = {x.id};
  node->out = Tensor(value(x).shape);
  for (long i = 0; i < node->out.numel(); ++i) node->out.data[i] = std::tanh(value(x).data[i]);
  return emit(std::move(node));
}

Value Graph::exp_(Value x) {
  auto node = std::make_unique<UnaryNode>(UnaryKind::kExp);
  node->inputs = {x.id};
  node->out = Tensor(value(x).shape);
  for (long i = 0; i < node->out.numel(); ++i) node->out.data[i] = std::exp(value(x).data[i]);
  return emit(std::move(node));
}

Value Graph::neg(Value x) {
  auto node = std::make_unique<UnaryNode>(UnaryKind::kNeg);
  node->inputs = {x.id};
  node->out = Tensor(value(x).shape);
  for (long i = 0; i < node->out.numel(); ++i) node->out.data[i] = -value(x).data[i];
  return emit(std::move(node));
}

Value Graph::sin_(Value x) {
  auto node = std::make_unique<UnaryNode>(UnaryKind::kSin);
  node->inputs = {x.id};
  node->out = Tensor(value(x).shape);
  for (long i = 0; i < node->out.numel(); ++i) node->out.data[i] = std::sin(value(x).data[i]);
  return emit(std::move(node));
}

Value Graph::cos_(Value x) {
  auto node = std::make_unique<UnaryNode>(UnaryKind::kCos);
  node->inputs = {x.id};
  node->out = Tensor(value(x).shape);
  for (long i = 0; i < node->out.numel(); ++i) node->out.data[i] = std::cos(value(x).data[i]);
  return emit(std::move(node));
}

Value Graph::reshape(Value x, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != value(x).numel())
    throw ShapeError("Graph::reshape: element count changes");
  auto node = std::make_unique<ReshapeNode>();
  node->inputs = {x.id};
  node->out = Tensor(std::move(shape), value(x).data);
  return emit(std::move(node));
}

Value Graph::slice_cols(Value x, int begin, int end) {
  const Tensor& tx = value(x);
  if (begin < 0 || end > tx.cols() || begin >= end)
    throw ShapeError("Graph::slice_cols: bad range");
  auto node = std::make_unique<SliceColsNode>(begin);
  node->inputs = {x.id};
  const int rows = tx.rows(), c = end - begin, xc = tx.cols();
  node->out = Tensor({rows, c});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < c; ++j)
      node->out.data[static_cast<size_t>(i) * c + j] =
          tx.data[static_cast<size_t>(i) * xc + begin + j];
  return emit(std::move(node));
}

Value Graph::time_slice(Value x, int t) {
  const Tensor& tx = value(x);
  if (tx.shape.size() != 3) throw ShapeError("Graph::time_slice: expects (B,T,d)");
  const int b = tx.shape[0], seq = tx.shape[1], d = tx.shape[2];
  if (t < 0 || t >= seq) throw ShapeError("Graph::time_slice: t out of range");
  auto node = std::make_unique<TimeSliceNode>(t);
  node->inputs = {x.id};
  node->out = Tensor({b, d});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < d; ++j)
      node->out.data[static_cast<size_t>(i) * d + j] =
          tx.data[(static_cast<size_t>(i) * seq + t) * d + j];
  return emit(std::move(node));
}

Value Graph::stack_time(const std::vector<Value>& xs) {
  if (xs.empty()) throw ShapeError("Graph::stack_time: empty input");
  const Tensor& t0 = value(xs[0]);
  const int b = t0.rows(), d = t0.cols(), seq = static_cast<int>(xs.size());
  auto node = std::make_unique<StackTimeNode>();
  node->out = Tensor({b, seq, d});
  for (int t = 0; t < seq; ++t) {
    const Tensor& tt = value(xs[t]);
    if (tt.rows() != b || tt.cols() != d) throw ShapeError("Graph::stack_time: shape mismatch");
    node->inputs.push_back(xs[t].id);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < d; ++j)
        node->out.data[(static_cast<size_t>(i) * seq + t) * d + j] =
            tt.data[static_cast<size_t>(i) * d + j];
  }
  return emit(std::move(node));
}

Value Graph::diag_scan(Value lambda, Value u, int batch, int seq_len) {
  const Tensor& tl = value(lambda);
  const Tensor& tu = value(u);
  if (tl.numel() != tu.cols() || tu.rows() != batch * seq_len)
    throw ShapeError("Graph::diag_scan: expects lambda (n) and u (B*T, n)");
  auto node = std::make_unique<DiagScanNode>();
  node->inputs = {lambda.id, u.id};
  node->b = batch;
  node->seq = seq_len;
  node->out = Tensor(tu.shape);
  const int b = batch, seq = seq_len, n = tu.cols();
  for (int i = 0; i < b; ++i) {
    const double* lam = tl.data.data();
    for (int t = 0; t < seq; ++t) {
      const size_t off = (static_cast<size_t>(i) * seq + t) * n;
      const double* prev = t ? node->out.data.data() + off - n : nullptr;
      for (int j = 0; j < n; ++j) {
        double h = (prev ? lam[j] * prev[j] : 0.0) + tu.data[off + j];
        if (!std::isfinite(h) || std::abs(h) > kStateOverflow)
          throw DivergenceError("diag_scan: state overflow at timestep " + std::to_string(t), t);
        node->out.data[off + j] = h;
      }
    }
  }
  return emit(std::move(node));
}

Value Graph::dense_scan(Value a, Value u, int batch, int seq_len) {
  const Tensor& ta = value(a);
  const Tensor& tu = value(u);
  if (ta.rows() != ta.cols() || ta.rows() != tu.cols() || tu.rows() != batch * seq_len)
    throw ShapeError("Graph::dense_scan: expects A (n,n) and u (B*T, n)");
  auto node = std::make_unique<DenseScanNode>();
  node->inputs = {a.id, u.id};
  node->b = batch;
  node->seq = seq_len;
  node->out = Tensor(tu.shape);
  const int b = batch, seq = seq_len, n = tu.cols();
  for (int i = 0; i < b; ++i) {
    for (int t = 0; t < seq; ++t) {
      const size_t off = (static_cast<size_t>(i) * seq + t) * n;
      const double* prev = t ? node->out.data.data() + off - n : nullptr;
      for (int j = 0; j < n; ++j) {
        double h = tu.data[off + j];
        if (prev) {
          const double* arow = ta.data.data() + static_cast<size_t>(j) * n;
          for (int r = 0; r < n; ++r) h += arow[r] * prev[r];
        }
        if (!std::isfinite(h) || std::abs(h) > kStateOverflow)
          throw DivergenceError("dense_scan: state overflow at timestep " + std::to_string(t),
                                t);
        node->out.data[off + j] = h;
      }
    }
  }
  return emit(std::move(node));
}

Value Graph::complex_diag_scan(Value lam_re, Value lam_im, Value u_re, Value u_im,
                               int batch, int seq_len) {
  const Tensor& tlr = value(lam_re);
  const Tensor& tli = value(lam_im);
  const Tensor& tur = value(u_re);
  const Tensor& tui = value(u_im);
  if (tur.shape != tui.shape || tlr.numel() != tur.cols() || tli.numel() != tur.cols() ||
      tur.rows() != batch * seq_len)
    throw ShapeError("Graph::complex_diag_scan: bad shapes");
  auto node = std::make_unique<ComplexDiagScanNode>();
  node->inputs = {lam_re.id, lam_im.id, u_re.id, u_im.id};
  node->b = batch;
  node->seq = seq_len;
  const int b = batch, seq = seq_len, n = tur.cols();
  node->out = Tensor({b * seq, 2 * n});
  for (int i = 0; i < b; ++i) {
    for (int t = 0; t < seq; ++t) {
      const size_t off2 = (static_cast<size_t>(i) * seq + t) * 2 * n;
      const size_t off1 = (static_cast<size_t>(i) * seq + t) * n;
      const double* prev = t ? node->out.data.data() + off2 - 2 * n : nullptr;
      for (int j = 0; j < n; ++j) {
        double lr = tlr.data[j], li = tli.data[j];
        double pre = prev ? prev[j] : 0.0;
        double pim = prev ? prev[n + j] : 0.0;
        double hre = lr * pre - li * pim + tur.data[off1 + j];
        double him = lr * pim + li * pre + tui.data[off1 + j];
        if (!std::isfinite(hre) || !std::isfinite(him) ||
            std::abs(hre) > kStateOverflow || std::abs(him) > kStateOverflow)
          throw DivergenceError(
              "complex_diag_scan: state overflow at timestep " + std::to_string(t), t);
        node->out.data[off2 + j] = hre;
        node->out.data[off2 + n + j] = him;
      }
    }
  }
  return emit(std::move(node));
}

Value Graph::masked_mse(Value pred, Value target, Value mask) {
  const Tensor& tp = value(pred);
  const Tensor& tt = value(target);
  const Tensor& tm = value(mask);
  if (tp.numel() != tt.numel() || tm.numel() != tp.rows())
    throw ShapeError("Graph::masked_mse: shape mismatch");
  auto node = std::make_unique<MaskedMseNode>();
  node->inputs = {pred.id, target.id, mask.id};
  node->out = Tensor({1});
  const int r = tp.rows(), c = tp.cols();
  double count = 0.0, loss = 0.0;
  for (int i = 0; i < r; ++i) count += tm.data[i];
  if (count <= 0.0) throw Error("Graph::masked_mse: mask selects nothing");
  for (int i = 0; i < r; ++i) {
    double m = tm.data[i];
    if (m == 0.0) continue;
    const size_t off = static_cast<size_t>(i) * c;
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      double d = tp.data[off + j] - tt.data[off + j];
      s += d * d;
    }
    loss += 0.5 * m * s;
  }
  node->inv_count = 1.0 / count;
  node->out.data[0] = loss / count;
  return emit(std::move(node));
}

Value Graph::masked_xent(Value logits, std::vector<int> classes, Value mask) {
  const Tensor& tz = value(logits);
  const Tensor& tm = value(mask);
  if (static_cast<int>(classes.size()) != tz.rows() || tm.numel() != tz.rows())
    throw ShapeError("Graph::masked_xent: shape mismatch");
  auto node = std::make_unique<MaskedXentNode>();
  node->inputs = {logits.id, mask.id};
  node->classes = std::move(classes);
  node->out = Tensor({1});
  const int r = tz.rows(), c = tz.cols();
  double count = 0.0, loss = 0.0;
  for (int i = 0; i < r; ++i) count += tm.data[i];
  if (count <= 0.0) throw Error("Graph::masked_xent: mask selects nothing");
  for (int i = 0; i < r; ++i) {
    double m = tm.data[i];
    if (m == 0.0) continue;
    int y = node->classes[i];
    if (y < 0 || y >= c) throw Error("Graph::masked_xent: class target out of range");
    const size_t off = static_cast<size_t>(i) * c;
    double zmax = tz.data[off];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, tz.data[off + j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(tz.data[off + j] - zmax);
    loss += m * (std::log(sum) + zmax - tz.data[off + y]);
  }
  node->inv_count = 1.0 / count;
  node->out.data[0] = loss / count;
  return emit(std::move(node));
}

void Graph::accumulate(int id, const Tensor& g) {
  accumulate_scaled(id, g.data.data(), g.numel(), 1.0);
}

void Graph::accumulate_scaled(int id, const double* data, long n, double s) {
  Tensor& slot = grad_slot(id);
  for (long i = 0; i < n; ++i) slot.data[i] += s * data[i];
}

Tensor& Graph::grad_slot(int id) {
  if (grads_[id].data.empty() && nodes_[id]->out.numel() > 0)
    grads_[id] = Tensor(nodes_[id]->out.shape);
  return grads_[id];
}

std::map<std::string, Tensor> Graph::backward(Value loss) {
  const Tensor& lt = value(loss);
  if (lt.numel() != 1) throw Error("Graph::backward: loss must be scalar");
  grads_.clear();
  grads_.resize(nodes_.size());
  grad_slot(loss.id).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    if (grads_[id].data.empty()) continue;
    nodes_[id]->backward(*this, grads_[id]);
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : params_) {
    if (grads_[id].data.empty())
      out[name] = Tensor(nodes_[id]->out.shape);
    else
      out[name] = grads_[id];
  }
  return out;
}

ValueAndGrad value_and_grad(const LossBuilder& builder, const ParamSet& params) {
  Graph g;
  std::map<std::string, Value> handles;
  for (const auto& [name, tensor] : params) handles[name] = g.param(name, tensor);
  Value loss = builder(g, handles);
  ValueAndGrad out;
  out.loss = g.value(loss).data[0];
  out.grads = g.backward(loss);
  return out;
}

}  // namespace linattn::grad
