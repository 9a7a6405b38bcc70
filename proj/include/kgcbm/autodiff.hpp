#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// Nodes are appended in creation order, which is already a topological order,
// so the reverse pass is a single backwards sweep over the tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgcbm/errors.hpp"
#include "kgcbm/tensor.hpp"

namespace kgcbm::ad {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

// Contiguous column range [offset, offset + width) of a batch x width tensor.
struct Segment {
  std::size_t offset = 0;
  std::size_t width = 0;
};

class Graph;

// Gradients of a scalar loss with respect to every node of the graph.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  const Tensor& of(Var v) const {
    if (v.id >= grads_.size()) throw UsageError("gradient requested for unknown node");
    return grads_[v.id];
  }

 private:
  std::vector<Tensor> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var constant(Tensor t) { return push("constant", std::move(t), {}, nullptr); }
  // Leaf whose gradient is wanted. Identical to constant for the engine; the
  // distinction only documents intent at the call site.
  Var parameter(Tensor t) { return push("parameter", std::move(t), {}, nullptr); }

  const Tensor& value(Var v) const { return node(v).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // a (n x k) times b (k x m), or times b^T when b is (m x k).
  Var matmul(Var a, Var b, bool transpose_b = false) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t n = A.rows(), k = A.cols();
    const std::size_t bk = transpose_b ? B.cols() : B.rows();
    const std::size_t m = transpose_b ? B.rows() : B.cols();
    if (bk != k) {
      throw ConfigError("matmul: inner extents differ, " + shape_string(A.shape()) + " x " +
                        shape_string(B.shape()) + (transpose_b ? "^T" : ""));
    }
    Tensor out(Shape{n, m});
    if (transpose_b) {
      gemm_nt(A.values().data(), B.values().data(), out.values().data(), n, k, m);
    } else {
      gemm_nn(A.values().data(), B.values().data(), out.values().data(), n, k, m);
    }
    return push("matmul", std::move(out), {a, b}, [=](Graph& g, const Tensor& gy) {
      const Tensor& Av = g.value(a);
      const Tensor& Bv = g.value(b);
      Tensor& gA = g.grad(a);
      Tensor& gB = g.grad(b);
      if (transpose_b) {
        // y = A B^T: dA = G B, dB = G^T A
        gemm_nn(gy.values().data(), Bv.values().data(), gA.values().data(), n, m, k, true);
        gemm_tn(gy.values().data(), Av.values().data(), gB.values().data(), n, m, k);
      } else {
        // y = A B: dA = G B^T, dB = A^T G
        gemm_nt(gy.values().data(), Bv.values().data(), gA.values().data(), n, m, k, true);
        gemm_tn(Av.values().data(), gy.values().data(), gB.values().data(), n, k, m);
      }
    });
  }

  // Elementwise sum. b may match a exactly or be a single row broadcast over
  // a's leading (batch) dimension.
  Var add(Var a, Var b) { return add_scaled(a, b, 1.0, "add"); }
  Var sub(Var a, Var b) { return add_scaled(a, b, -1.0, "sub"); }

  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) {
      throw ConfigError("mul: shapes differ, " + shape_string(A.shape()) + " vs " +
                        shape_string(B.shape()));
    }
    Tensor out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
    return push("mul", std::move(out), {a, b}, [=](Graph& g, const Tensor& gy) {
      const Tensor& Av = g.value(a);
      const Tensor& Bv = g.value(b);
      Tensor& gA = g.grad(a);
      Tensor& gB = g.grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        gA[i] += gy[i] * Bv[i];
        gB[i] += gy[i] * Av[i];
      }
    });
  }

  Var add_scalar(Var a, double c) {
    Tensor out = value(a);
    for (auto& v : out.values()) v += c;
    return push("add_scalar", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      Tensor& gA = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) gA[i] += gy[i];
    });
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (auto& v : out.values()) v *= c;
    return push("scale", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      Tensor& gA = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) gA[i] += c * gy[i];
    });
  }

  // max(0, x); subgradient 0 at x = 0.
  Var relu(Var a) {
    Tensor out = value(a);
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return push("relu", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      const Tensor& Av = g.value(a);
      Tensor& gA = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (Av[i] > 0.0) gA[i] += gy[i];
    });
  }

  // |x|; subgradient 0 at x = 0.
  Var abs(Var a) {
    Tensor out = value(a);
    for (auto& v : out.values()) v = std::fabs(v);
    return push("abs", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      const Tensor& Av = g.value(a);
      Tensor& gA = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (Av[i] > 0.0) gA[i] += gy[i];
        else if (Av[i] < 0.0) gA[i] -= gy[i];
      }
    });
  }

  // log(max(x, floor)). Entries at or below the floor get zero gradient.
  Var log(Var a, double floor = 0.0) {
    Tensor out = value(a);
    for (auto& v : out.values()) v = std::log(std::max(v, floor));
    return push("log", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      const Tensor& Av = g.value(a);
      Tensor& gA = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (Av[i] > floor) gA[i] += gy[i] / Av[i];
    });
  }

  // Softmax applied independently to each column segment of every row.
  // Segments must tile the trailing dimension.
  Var softmax(Var a, std::span<const Segment> segments) {
    const Tensor& A = value(a);
    require_matrix(A, "softmax");
    check_tiling(segments, A.cols(), "softmax");
    std::vector<Segment> segs(segments.begin(), segments.end());
    Tensor out(A.shape());
    const std::size_t cols = A.cols();
    for (std::size_t r = 0; r < A.rows(); ++r) {
      const double* x = A.values().data() + r * cols;
      double* y = out.values().data() + r * cols;
      for (const auto& s : segs) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = s.offset; j < s.offset + s.width; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = s.offset; j < s.offset + s.width; ++j) {
          y[j] = std::exp(x[j] - mx);
          z += y[j];
        }
        for (std::size_t j = s.offset; j < s.offset + s.width; ++j) y[j] /= z;
      }
    }
    const std::size_t self = nodes_.size();
    return push("softmax", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      const Tensor& Y = g.nodes_[self].value;
      Tensor& gA = g.grad(a);
      for (std::size_t r = 0; r < Y.rows(); ++r) {
        const double* y = Y.values().data() + r * cols;
        const double* go = gy.values().data() + r * cols;
        double* gi = gA.values().data() + r * cols;
        for (const auto& s : segs) {
          double dot = 0.0;
          for (std::size_t j = s.offset; j < s.offset + s.width; ++j) dot += go[j] * y[j];
          for (std::size_t j = s.offset; j < s.offset + s.width; ++j) gi[j] += y[j] * (go[j] - dot);
        }
      }
    });
  }

  Var softmax(Var a) {
    const Segment whole{0, value(a).cols()};
    return softmax(a, std::span<const Segment>(&whole, 1));
  }

  // Column-wise concatenation of equally tall tensors.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ConfigError("concat: no operands");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      require_matrix(value(p), "concat");
      if (value(p).rows() != rows) throw ConfigError("concat: row counts differ");
      cols += value(p).cols();
    }
    Tensor out(Shape{rows, cols});
    std::vector<Var> ps(parts.begin(), parts.end());
    std::size_t off = 0;
    for (Var p : ps) {
      const Tensor& P = value(p);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < P.cols(); ++c) out.at(r, off + c) = P.at(r, c);
      off += P.cols();
    }
    return push("concat", std::move(out), ps, [=](Graph& g, const Tensor& gy) {
      std::size_t o = 0;
      for (Var p : ps) {
        Tensor& gp = g.grad(p);
        const std::size_t w = gp.cols();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp.at(r, c) += gy.at(r, o + c);
        o += w;
      }
    });
  }

  // Columns [offset, offset + width) as a rows x width tensor.
  Var slice(Var a, Segment seg) {
    const Tensor& A = value(a);
    require_matrix(A, "slice");
    check_segment(seg, A.cols(), "slice");
    const std::size_t rows = A.rows();
    Tensor out(Shape{rows, seg.width});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < seg.width; ++c) out.at(r, c) = A.at(r, seg.offset + c);
    return push("slice", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      Tensor& gA = g.grad(a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < seg.width; ++c) gA.at(r, seg.offset + c) += gy.at(r, c);
    });
  }

  // Copy of a with the given column segment set to zero in every row.
  Var zero_mask(Var a, Segment seg) {
    const Tensor& A = value(a);
    require_matrix(A, "zero_mask");
    check_segment(seg, A.cols(), "zero_mask");
    Tensor out = A;
    const std::size_t rows = A.rows();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = seg.offset; c < seg.offset + seg.width; ++c) out.at(r, c) = 0.0;
    return push("zero_mask", std::move(out), {a}, [=](Graph& g, const Tensor& gy) {
      Tensor& gA = g.grad(a);
      const std::size_t cols = gA.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          if (c < seg.offset || c >= seg.offset + seg.width) gA.at(r, c) += gy.at(r, c);
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : value(a).values()) s += v;
    return push("sum", Tensor::scalar(s), {a}, [=](Graph& g, const Tensor& gy) {
      Tensor& gA = g.grad(a);
      const double d = gy[0];
      for (auto& v : gA.values()) v += d;
    });
  }

  Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).size())); }

  // Reverse sweep from a scalar node. One call per graph; reset() to reuse.
  Gradients backward(Var loss) {
    if (backward_done_) throw UsageError("backward called twice on the same graph without reset");
    if (value(loss).size() != 1) {
      throw UsageError("backward needs a scalar loss, got shape " +
                       shape_string(value(loss).shape()));
    }
    backward_done_ = true;
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const auto& n : nodes_) grads_.emplace_back(n.value.shape(), 0.0);
    grads_[loss.id][0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward) n.backward(*this, grads_[i]);
    }
    return Gradients(std::move(grads_));
  }

  void reset() {
    nodes_.clear();
    grads_.clear();
    backward_done_ = false;
  }

 private:
  using BackwardFn = std::function<void(Graph&, const Tensor&)>;
  struct Node {
    std::string op;
    Tensor value;
    std::vector<Var> parents;
    BackwardFn backward;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this graph");
    return nodes_[v.id];
  }

  Tensor& grad(Var v) { return grads_[v.id]; }

  Var push(const char* op, Tensor value, std::vector<Var> parents, BackwardFn fn) {
    if (backward_done_) throw UsageError("graph already differentiated; call reset() first");
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
    nodes_.push_back(Node{op, std::move(value), std::move(parents), std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  Var add_scaled(Var a, Var b, double sign, const char* op) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const bool same = A.shape() == B.shape();
    const bool row = !same && A.rank() == 2 && B.size() == A.cols() &&
                     (B.rank() == 1 || (B.rank() == 2 && B.rows() == 1));
    if (!same && !row) {
      throw ConfigError(std::string(op) + ": cannot combine " + shape_string(A.shape()) +
                        " with " + shape_string(B.shape()));
    }
    Tensor out = A;
    const std::size_t cols = A.cols();
    if (same) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * B[i];
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * B[i % cols];
    }
    return push(op, std::move(out), {a, b}, [=](Graph& g, const Tensor& gy) {
      Tensor& gA = g.grad(a);
      Tensor& gB = g.grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gA[i] += gy[i];
      if (same) {
        for (std::size_t i = 0; i < gy.size(); ++i) gB[i] += sign * gy[i];
      } else {
        for (std::size_t i = 0; i < gy.size(); ++i) gB[i % cols] += sign * gy[i];
      }
    });
  }

  static void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
      throw ConfigError(std::string(op) + ": expected a matrix, got shape " +
                        shape_string(t.shape()));
    }
  }

  static void check_segment(Segment s, std::size_t cols, const char* op) {
    if (s.width == 0 || s.offset + s.width > cols) {
      throw ConfigError(std::string(op) + ": segment [" + std::to_string(s.offset) + ", " +
                        std::to_string(s.offset + s.width) + ") outside width " +
                        std::to_string(cols));
    }
  }

  static void check_tiling(std::span<const Segment> segs, std::size_t cols, const char* op) {
    std::size_t next = 0;
    for (const auto& s : segs) {
      if (s.offset != next || s.width == 0) {
        throw ConfigError(std::string(op) + ": segments must tile the trailing dimension");
      }
      next += s.width;
    }
    if (next != cols) {
      throw ConfigError(std::string(op) + ": segments cover " + std::to_string(next) +
                        " of " + std::to_string(cols) + " columns");
    }
  }

  // C (n x m) (+)= A (n x k) * B (k x m)
  static void gemm_nn(const double* A, const double* B, double* C, std::size_t n,
                      std::size_t k, std::size_t m, bool accumulate = false) {
    if (!accumulate) std::fill(C, C + n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* c = C + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double a = A[i * k + p];
        if (a == 0.0) continue;
        const double* b = B + p * m;
        for (std::size_t j = 0; j < m; ++j) c[j] += a * b[j];
      }
    }
  }

  // C (n x m) (+)= A (n x k) * B^T, B is (m x k)
  static void gemm_nt(const double* A, const double* B, double* C, std::size_t n,
                      std::size_t k, std::size_t m, bool accumulate = false) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* a = A + i * k;
      for (std::size_t j = 0; j < m; ++j) {
        const double* b = B + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
        if (accumulate) C[i * m + j] += s;
        else C[i * m + j] = s;
      }
    }
  }

  // C (k x m) += A^T * B, A is (n x k), B is (n x m)
  static void gemm_tn(const double* A, const double* B, double* C, std::size_t n,
                      std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* b = B + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double a = A[i * k + p];
        if (a == 0.0) continue;
        double* c = C + p * m;
        for (std::size_t j = 0; j < m; ++j) c[j] += a * b[j];
      }
    }
  }

  std::deque<Node> nodes_;  // deque: value() references survive later pushes
  std::vector<Tensor> grads_;
  bool backward_done_ = false;
};

}  // namespace kgcbm::ad
