#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdat/dual.hpp"
#include "sdat/tensor.hpp"

namespace sdat {

using ValueId = std::int32_t;

enum class Op : std::uint8_t {
  kConst,
  kParam,
  kLinear,
  kAdd,
  kMul,
  kScale,
  kAddScalar,
  kRelu,
  kExp,
  kLog,
  kSquare,
  kRsqrt,
  kSigmoidClamp,
  kColMean,
  kSubRow,
  kMulRow,
  kAddRow,
  kSumAll,
  kMeanAll,
  kLogSoftmax,
  kConcatRows,
  kSliceRows,
  kGrl,
  kMultilinear,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kConst: return "const";
    case Op::kParam: return "param";
    case Op::kLinear: return "linear";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kRsqrt: return "rsqrt";
    case Op::kSigmoidClamp: return "sigmoid_clamp";
    case Op::kColMean: return "col_mean";
    case Op::kSubRow: return "sub_row";
    case Op::kMulRow: return "mul_row";
    case Op::kAddRow: return "add_row";
    case Op::kSumAll: return "sum_all";
    case Op::kMeanAll: return "mean_all";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceRows: return "slice_rows";
    case Op::kGrl: return "grl";
    case Op::kMultilinear: return "multilinear";
  }
  return "?";
}

struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward visits each node exactly once
// in reverse. Instantiated with S = double for values and gradients and with
// S = Dual for exact Hessian-vector products.
//
// Every node's outputs are checked for NaN/Inf as soon as they are computed
// and the offending node is named in the error; curvature probes amplify
// silent numeric corruption, so nothing is allowed to propagate.
template <class S>
class Tape {
 public:
  using Traits = ScalarTraits<S>;

  struct Node {
    Op op;
    ValueId in0 = -1, in1 = -1, in2 = -1;
    int rows = 0, cols = 0;
    double a0 = 0.0, a1 = 0.0;  // op parameters: scale factor, clamp limit, slice range, GRL lambda
    std::vector<S> val;
    std::vector<S> adj;
  };

  // ----- leaves ------------------------------------------------------------

  ValueId constant(const Tensor& t) {
    Node n = make_node(Op::kConst, t.rows(), t.cols());
    for (std::size_t i = 0; i < t.data.size(); ++i) n.val[i] = Traits::make(t.data[i], 0.0);
    return push(std::move(n));
  }

  ValueId constant(int rows, int cols, std::span<const double> v) {
    check_size(rows, cols, v.size(), "constant");
    Node n = make_node(Op::kConst, rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i) n.val[i] = Traits::make(v[i], 0.0);
    return push(std::move(n));
  }

  ValueId param(int rows, int cols, std::span<const double> v, std::span<const double> tangent = {}) {
    check_size(rows, cols, v.size(), "param");
    if (!tangent.empty() && tangent.size() != v.size())
      throw TapeError("param tangent length does not match values");
    Node n = make_node(Op::kParam, rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i)
      n.val[i] = Traits::make(v[i], tangent.empty() ? 0.0 : tangent[i]);
    return push(std::move(n));
  }

  // ----- primitives ---------------------------------------------------------

  // y = x * w^T + b with x: n x i, w: o x i, b: 1 x o.
  ValueId linear(ValueId x, ValueId w, ValueId b) {
    const Node& nx = at(x);
    const Node& nw = at(w);
    const Node& nb = at(b);
    if (nx.cols != nw.cols) throw TapeError("linear: input width does not match weight fan-in");
    if (nb.rows != 1 || nb.cols != nw.rows) throw TapeError("linear: bias shape mismatch");
    Node n = make_node(Op::kLinear, nx.rows, nw.rows, x, w, b);
    for (int r = 0; r < nx.rows; ++r) {
      for (int c = 0; c < nw.rows; ++c) {
        S acc = nb.val[c];
        for (int k = 0; k < nx.cols; ++k)
          acc += nx.val[idx(nx, r, k)] * nw.val[idx(nw, c, k)];
        n.val[static_cast<std::size_t>(r) * nw.rows + c] = acc;
      }
    }
    return push(std::move(n));
  }

  ValueId add(ValueId a, ValueId b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    require_same_shape(na, nb, "add");
    Node n = make_node(Op::kAdd, na.rows, na.cols, a, b);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = na.val[i] + nb.val[i];
    return push(std::move(n));
  }

  ValueId mul(ValueId a, ValueId b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    require_same_shape(na, nb, "mul");
    Node n = make_node(Op::kMul, na.rows, na.cols, a, b);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = na.val[i] * nb.val[i];
    return push(std::move(n));
  }

  ValueId scale(ValueId x, double c) {
    const Node& nx = at(x);
    Node n = make_node(Op::kScale, nx.rows, nx.cols, x);
    n.a0 = c;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = nx.val[i] * S(c);
    return push(std::move(n));
  }

  ValueId add_scalar(ValueId x, double c) {
    const Node& nx = at(x);
    Node n = make_node(Op::kAddScalar, nx.rows, nx.cols, x);
    n.a0 = c;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = nx.val[i] + S(c);
    return push(std::move(n));
  }

  ValueId relu(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kRelu, nx.rows, nx.cols, x);
    for (std::size_t i = 0; i < n.val.size(); ++i)
      n.val[i] = Traits::value(nx.val[i]) > 0.0 ? nx.val[i] : S(0.0);
    return push(std::move(n));
  }

  ValueId exp(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kExp, nx.rows, nx.cols, x);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = scalar_exp(nx.val[i]);
    return push(std::move(n));
  }

  ValueId log(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kLog, nx.rows, nx.cols, x);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = scalar_log(nx.val[i]);
    return push(std::move(n));
  }

  ValueId square(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kSquare, nx.rows, nx.cols, x);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = nx.val[i] * nx.val[i];
    return push(std::move(n));
  }

  ValueId rsqrt(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kRsqrt, nx.rows, nx.cols, x);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = S(1.0) / scalar_sqrt(nx.val[i]);
    return push(std::move(n));
  }

  // sigmoid(clamp(x, -limit, limit)); keeps log(d) and log(1-d) finite.
  ValueId sigmoid_clamp(ValueId x, double limit) {
    const Node& nx = at(x);
    Node n = make_node(Op::kSigmoidClamp, nx.rows, nx.cols, x);
    n.a0 = limit;
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      const double xv = Traits::value(nx.val[i]);
      S t = nx.val[i];
      if (xv > limit) t = S(limit);
      if (xv < -limit) t = S(-limit);
      n.val[i] = S(1.0) / (S(1.0) + scalar_exp(-t));
    }
    return push(std::move(n));
  }

  // n x f -> 1 x f mean over rows.
  ValueId col_mean(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kColMean, 1, nx.cols, x);
    const S inv = S(1.0 / nx.rows);
    for (int c = 0; c < nx.cols; ++c) {
      S acc(0.0);
      for (int r = 0; r < nx.rows; ++r) acc += nx.val[idx(nx, r, c)];
      n.val[c] = acc * inv;
    }
    return push(std::move(n));
  }

  ValueId sub_row(ValueId x, ValueId row) { return rowwise(Op::kSubRow, x, row); }
  ValueId mul_row(ValueId x, ValueId row) { return rowwise(Op::kMulRow, x, row); }
  ValueId add_row(ValueId x, ValueId row) { return rowwise(Op::kAddRow, x, row); }

  ValueId sum_all(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kSumAll, 1, 1, x);
    S acc(0.0);
    for (const S& v : nx.val) acc += v;
    n.val[0] = acc;
    return push(std::move(n));
  }

  ValueId mean_all(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kMeanAll, 1, 1, x);
    S acc(0.0);
    for (const S& v : nx.val) acc += v;
    n.val[0] = acc * S(1.0 / static_cast<double>(nx.val.size()));
    return push(std::move(n));
  }

  // Row-wise log softmax with max subtraction.
  ValueId log_softmax(ValueId x) {
    const Node& nx = at(x);
    Node n = make_node(Op::kLogSoftmax, nx.rows, nx.cols, x);
    for (int r = 0; r < nx.rows; ++r) {
      S m = nx.val[idx(nx, r, 0)];
      for (int c = 1; c < nx.cols; ++c) {
        const S& v = nx.val[idx(nx, r, c)];
        if (Traits::value(v) > Traits::value(m)) m = v;
      }
      S z(0.0);
      for (int c = 0; c < nx.cols; ++c) z += scalar_exp(nx.val[idx(nx, r, c)] - m);
      const S lse = m + scalar_log(z);
      for (int c = 0; c < nx.cols; ++c) n.val[idx(n, r, c)] = nx.val[idx(nx, r, c)] - lse;
    }
    return push(std::move(n));
  }

  ValueId concat_rows(ValueId a, ValueId b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.cols != nb.cols) throw TapeError("concat_rows: column mismatch");
    Node n = make_node(Op::kConcatRows, na.rows + nb.rows, na.cols, a, b);
    std::size_t o = 0;
    for (const S& v : na.val) n.val[o++] = v;
    for (const S& v : nb.val) n.val[o++] = v;
    return push(std::move(n));
  }

  ValueId slice_rows(ValueId x, int row_begin, int row_end) {
    const Node& nx = at(x);
    if (row_begin < 0 || row_end > nx.rows || row_begin >= row_end)
      throw TapeError("slice_rows: range out of bounds");
    Node n = make_node(Op::kSliceRows, row_end - row_begin, nx.cols, x);
    n.a0 = row_begin;
    n.a1 = row_end;
    for (int r = row_begin; r < row_end; ++r)
      for (int c = 0; c < nx.cols; ++c) n.val[idx(n, r - row_begin, c)] = nx.val[idx(nx, r, c)];
    return push(std::move(n));
  }

  // Gradient reversal: identity forward, adjoint scaled by -lambda.
  ValueId grl(ValueId x, double lambda) {
    if (lambda < 0.0) throw TapeError("grl: lambda must be nonnegative");
    const Node& nx = at(x);
    Node n = make_node(Op::kGrl, nx.rows, nx.cols, x);
    n.a0 = lambda;
    n.val = nx.val;
    return push(std::move(n));
  }

  // Row-wise flattened outer product: out[i, a*k + b] = f[i,a] * p[i,b].
  ValueId multilinear(ValueId f, ValueId p) {
    const Node& nf = at(f);
    const Node& np = at(p);
    if (nf.rows != np.rows) throw TapeError("multilinear: row mismatch");
    Node n = make_node(Op::kMultilinear, nf.rows, nf.cols * np.cols, f, p);
    for (int r = 0; r < nf.rows; ++r)
      for (int a = 0; a < nf.cols; ++a)
        for (int b = 0; b < np.cols; ++b)
          n.val[idx(n, r, a * np.cols + b)] = nf.val[idx(nf, r, a)] * np.val[idx(np, r, b)];
    return push(std::move(n));
  }

  // ----- backward ------------------------------------------------------------

  void backward(ValueId root) {
    if (backward_done_)
      throw TapeError("backward already ran on this tape; rebuild the graph first");
    const Node& r = at(root);
    if (r.val.size() != 1) throw TapeError("backward root must be a scalar");
    for (Node& n : nodes_) n.adj.assign(n.val.size(), S(0.0));
    nodes_[static_cast<std::size_t>(root)].adj[0] = S(1.0);
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i)
      propagate(static_cast<ValueId>(i));
    backward_done_ = true;
  }

  const std::vector<S>& value(ValueId id) const { return at(id).val; }
  const std::vector<S>& adjoint(ValueId id) const {
    if (!backward_done_) throw TapeError("adjoint read before backward");
    return at(id).adj;
  }
  const Node& node(ValueId id) const { return at(id); }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  static S scalar_exp(const S& x) {
    using std::exp;
    return exp(x);
  }
  static S scalar_log(const S& x) {
    using std::log;
    return log(x);
  }
  static S scalar_sqrt(const S& x) {
    using std::sqrt;
    return sqrt(x);
  }

  static std::size_t idx(const Node& n, int r, int c) {
    return static_cast<std::size_t>(r) * n.cols + c;
  }

  static void check_size(int rows, int cols, std::size_t got, const char* what) {
    if (rows <= 0 || cols <= 0 ||
        static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != got)
      throw TapeError(std::string(what) + ": shape does not match data length");
  }

  static void require_same_shape(const Node& a, const Node& b, const char* what) {
    if (a.rows != b.rows || a.cols != b.cols)
      throw TapeError(std::string(what) + ": shape mismatch");
  }

  Node make_node(Op op, int rows, int cols, ValueId in0 = -1, ValueId in1 = -1, ValueId in2 = -1) {
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.in0 = in0;
    n.in1 = in1;
    n.in2 = in2;
    n.val.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), S(0.0));
    return n;
  }

  const Node& at(ValueId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw TapeError("invalid tape node id");
    return nodes_[static_cast<std::size_t>(id)];
  }
  Node& at(ValueId id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw TapeError("invalid tape node id");
    return nodes_[static_cast<std::size_t>(id)];
  }

  ValueId push(Node n) {
    if (backward_done_)
      throw TapeError("tape is frozen after backward; rebuild the graph");
    const ValueId id = static_cast<ValueId>(nodes_.size());
    for (const S& v : n.val)
      if (!Traits::finite(v))
        throw TapeError("non-finite value at node " + std::to_string(id) + " (" +
                        op_name(n.op) + ")");
    nodes_.push_back(std::move(n));
    return id;
  }

  ValueId rowwise(Op op, ValueId x, ValueId row) {
    const Node& nx = at(x);
    const Node& nr = at(row);
    if (nr.rows != 1 || nr.cols != nx.cols)
      throw TapeError(std::string(op_name(op)) + ": row operand must be 1 x cols");
    Node n = make_node(op, nx.rows, nx.cols, x, row);
    for (int r = 0; r < nx.rows; ++r) {
      for (int c = 0; c < nx.cols; ++c) {
        const S& a = nx.val[idx(nx, r, c)];
        const S& b = nr.val[static_cast<std::size_t>(c)];
        S out(0.0);
        if (op == Op::kSubRow) out = a - b;
        if (op == Op::kMulRow) out = a * b;
        if (op == Op::kAddRow) out = a + b;
        n.val[idx(n, r, c)] = out;
      }
    }
    return push(std::move(n));
  }

  void propagate(ValueId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    for (const S& v : n.adj)
      if (!Traits::finite(v))
        throw TapeError("non-finite adjoint at node " + std::to_string(id) + " (" +
                        op_name(n.op) + ")");
    switch (n.op) {
      case Op::kConst:
      case Op::kParam:
        return;
      case Op::kLinear: {
        Node& nx = at(n.in0);
        Node& nw = at(n.in1);
        Node& nb = at(n.in2);
        for (int r = 0; r < nx.rows; ++r) {
          for (int c = 0; c < nw.rows; ++c) {
            const S& g = n.adj[idx(n, r, c)];
            for (int k = 0; k < nx.cols; ++k) {
              nx.adj[idx(nx, r, k)] += g * nw.val[idx(nw, c, k)];
              nw.adj[idx(nw, c, k)] += g * nx.val[idx(nx, r, k)];
            }
            nb.adj[static_cast<std::size_t>(c)] += g;
          }
        }
        return;
      }
      case Op::kAdd: {
        Node& na = at(n.in0);
        Node& nb = at(n.in1);
        for (std::size_t i = 0; i < n.adj.size(); ++i) {
          na.adj[i] += n.adj[i];
          nb.adj[i] += n.adj[i];
        }
        return;
      }
      case Op::kMul: {
        Node& na = at(n.in0);
        Node& nb = at(n.in1);
        for (std::size_t i = 0; i < n.adj.size(); ++i) {
          na.adj[i] += n.adj[i] * nb.val[i];
          nb.adj[i] += n.adj[i] * na.val[i];
        }
        return;
      }
      case Op::kScale: {
        Node& nx = at(n.in0);
        for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += n.adj[i] * S(n.a0);
        return;
      }
      case Op::kAddScalar: {
        Node& nx = at(n.in0);
        for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += n.adj[i];
        return;
      }
      case Op::kRelu: {
        Node& nx = at(n.in0);
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          if (Traits::value(nx.val[i]) > 0.0) nx.adj[i] += n.adj[i];
        return;
      }
      case Op::kExp: {
        Node& nx = at(n.in0);
        for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += n.adj[i] * n.val[i];
        return;
      }
      case Op::kLog: {
        Node& nx = at(n.in0);
        for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += n.adj[i] / nx.val[i];
        return;
      }
      case Op::kSquare: {
        Node& nx = at(n.in0);
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nx.adj[i] += n.adj[i] * S(2.0) * nx.val[i];
        return;
      }
      case Op::kRsqrt: {
        Node& nx = at(n.in0);
        // d/dx x^{-1/2} = -1/2 x^{-3/2} = -1/2 y^3 with y = rsqrt(x)
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nx.adj[i] += n.adj[i] * S(-0.5) * n.val[i] * n.val[i] * n.val[i];
        return;
      }
      case Op::kSigmoidClamp: {
        Node& nx = at(n.in0);
        for (std::size_t i = 0; i < n.adj.size(); ++i) {
          const double xv = Traits::value(nx.val[i]);
          if (xv > n.a0 || xv < -n.a0) continue;  // clamped region: zero slope
          nx.adj[i] += n.adj[i] * n.val[i] * (S(1.0) - n.val[i]);
        }
        return;
      }
      case Op::kColMean: {
        Node& nx = at(n.in0);
        const S inv = S(1.0 / nx.rows);
        for (int r = 0; r < nx.rows; ++r)
          for (int c = 0; c < nx.cols; ++c)
            nx.adj[idx(nx, r, c)] += n.adj[static_cast<std::size_t>(c)] * inv;
        return;
      }
      case Op::kSubRow:
      case Op::kMulRow:
      case Op::kAddRow: {
        Node& nx = at(n.in0);
        Node& nr = at(n.in1);
        for (int r = 0; r < nx.rows; ++r) {
          for (int c = 0; c < nx.cols; ++c) {
            const S& g = n.adj[idx(n, r, c)];
            if (n.op == Op::kSubRow) {
              nx.adj[idx(nx, r, c)] += g;
              nr.adj[static_cast<std::size_t>(c)] -= g;
            } else if (n.op == Op::kAddRow) {
              nx.adj[idx(nx, r, c)] += g;
              nr.adj[static_cast<std::size_t>(c)] += g;
            } else {
              nx.adj[idx(nx, r, c)] += g * nr.val[static_cast<std::size_t>(c)];
              nr.adj[static_cast<std::size_t>(c)] += g * nx.val[idx(nx, r, c)];
            }
          }
        }
        return;
      }
      case Op::kSumAll: {
        Node& nx = at(n.in0);
        for (S& a : nx.adj) a += n.adj[0];
        return;
      }
      case Op::kMeanAll: {
        Node& nx = at(n.in0);
        const S g = n.adj[0] * S(1.0 / static_cast<double>(nx.val.size()));
        for (S& a : nx.adj) a += g;
        return;
      }
      case Op::kLogSoftmax: {
        Node& nx = at(n.in0);
        for (int r = 0; r < n.rows; ++r) {
          S gsum(0.0);
          for (int c = 0; c < n.cols; ++c) gsum += n.adj[idx(n, r, c)];
          for (int c = 0; c < n.cols; ++c)
            nx.adj[idx(nx, r, c)] +=
                n.adj[idx(n, r, c)] - scalar_exp(n.val[idx(n, r, c)]) * gsum;
        }
        return;
      }
      case Op::kConcatRows: {
        Node& na = at(n.in0);
        Node& nb = at(n.in1);
        std::size_t o = 0;
        for (S& a : na.adj) a += n.adj[o++];
        for (S& a : nb.adj) a += n.adj[o++];
        return;
      }
      case Op::kSliceRows: {
        Node& nx = at(n.in0);
        const int begin = static_cast<int>(n.a0);
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c)
            nx.adj[idx(nx, r + begin, c)] += n.adj[idx(n, r, c)];
        return;
      }
      case Op::kGrl: {
        Node& nx = at(n.in0);
        const S neg_lambda = S(-n.a0);
        for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += n.adj[i] * neg_lambda;
        return;
      }
      case Op::kMultilinear: {
        Node& nf = at(n.in0);
        Node& np = at(n.in1);
        const int k = np.cols;
        for (int r = 0; r < nf.rows; ++r) {
          for (int a = 0; a < nf.cols; ++a) {
            for (int b = 0; b < k; ++b) {
              const S& g = n.adj[idx(n, r, a * k + b)];
              nf.adj[idx(nf, r, a)] += g * np.val[idx(np, r, b)];
              np.adj[idx(np, r, b)] += g * nf.val[idx(nf, r, a)];
            }
          }
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace sdat
