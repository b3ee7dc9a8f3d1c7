// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation on an append-only tape. Each operation appends
// one node holding its output value; append order is a topological order by
// construction, so backward() is a single reverse sweep that accumulates
// gradients additively into every node that requires them. A tape belongs to
// one unit of execution; independent tapes may run concurrently.

#pragma once

#include <array>
#include <deque>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tmlga/errors.hpp"
#include "tmlga/rng.hpp"
#include "tmlga/tensor.hpp"

namespace tmlga {

class Tape;

// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

enum class OpKind {
  kLeaf,
  kAdd,        // elementwise, same shape
  kAddScalar,  // second input has one element, broadcast
  kAddRowVec,  // row vector added to every matrix row
  kSub,
  kMul,        // Hadamard
  kScale,      // multiply by compile-time constant c0
  kNeg,
  kMatMul,
  kMatVec,
  kTranspose,
  kTanh,
  kSigmoid,
  kLog,
  kLogFloored,  // log(max(x, c0)); loss compositions only
  kExp,
  kSoftmax,   // rank-1, max-subtracted
  kMeanRows,  // column means of a matrix
  kSum,       // -> scalar
  kDropout,   // ctx holds the per-entry multiplier mask
  kScaleRows, // matrix row i scaled by vector entry i
  kConcat,    // rank-1 concatenation
  kStackRows, // m rank-1 inputs -> m x k matrix
  kRow,       // single matrix row -> vector
  kPick,      // single vector entry -> scalar
};

class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return node(v).value; }

  // Valid after backward(); zero for leaves unreachable from the loss.
  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.numel() == 0) {
      throw error("grad queried before backward()");
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Gradients of earlier calls are cleared
  // first, so backward(a*L1 + b*L2) can be compared against separate sweeps.
  void backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.value.numel() != 1) {
      throw shape_error("backward: loss must be scalar, got shape " + ln.value.shape_str());
    }
    for (Node& n : nodes_) {
      n.grad = Tensor::zeros(n.value.shape());
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad) continue;
      apply_backward(n);
    }
  }

 private:
  friend Var add(Var, Var);
  friend Var add_scalar(Var, Var);
  friend Var add_rowvec(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var scale(Var, double);
  friend Var neg(Var);
  friend Var matmul(Var, Var);
  friend Var matvec(Var, Var);
  friend Var transpose(Var);
  friend Var tanh(Var);
  friend Var sigmoid(Var);
  friend Var log(Var);
  friend Var log_floored(Var, double);
  friend Var exp(Var);
  friend Var softmax(Var);
  friend Var mean_rows(Var);
  friend Var sum(Var);
  friend Var dropout(Var, double, RngState&, bool);
  friend Var scale_rows(Var, Var);
  friend Var concat(Var, Var);
  friend Var stack_rows(const std::vector<Var>&);
  friend Var row(Var, std::size_t);
  friend Var pick(Var, std::size_t);

  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::array<int, 2> in{-1, -1};
    std::vector<int> in_list;  // kStackRows only
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<double> ctx;  // op-specific saved values (dropout mask)
    std::int64_t k0 = 0;      // op-specific saved index
    double c0 = 0.0;          // op-specific saved constant
  };

  const Node& node(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw error("var does not belong to this tape");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var emit(OpKind kind, Var a, Var b, Tensor value) {
    Node n;
    n.kind = kind;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = std::move(value);
    n.requires_grad = node(a).requires_grad || (b.id >= 0 && node(b).requires_grad);
    return push(std::move(n));
  }

  Tensor& grad_of(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void apply_backward(Node& n) {
    const Tensor& gy = n.grad;
    switch (n.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd: {
        accumulate(n.in[0], gy);
        accumulate(n.in[1], gy);
        break;
      }
      case OpKind::kAddScalar: {
        accumulate(n.in[0], gy);
        if (wants_grad(n.in[1])) {
          double s = 0;
          for (std::size_t i = 0; i < gy.numel(); ++i) s += gy[i];
          grad_of(n.in[1])[0] += s;
        }
        break;
      }
      case OpKind::kAddRowVec: {
        accumulate(n.in[0], gy);
        if (wants_grad(n.in[1])) {
          Tensor& gv = grad_of(n.in[1]);
          for (std::size_t i = 0; i < gy.rows(); ++i)
            for (std::size_t j = 0; j < gy.cols(); ++j) gv[j] += gy.at(i, j);
        }
        break;
      }
      case OpKind::kSub: {
        accumulate(n.in[0], gy);
        if (wants_grad(n.in[1])) {
          Tensor& gb = grad_of(n.in[1]);
          for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] -= gy[i];
        }
        break;
      }
      case OpKind::kMul: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          const Tensor& b = value_of(n.in[1]);
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * b[i];
        }
        if (wants_grad(n.in[1])) {
          Tensor& gb = grad_of(n.in[1]);
          const Tensor& a = value_of(n.in[0]);
          for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * a[i];
        }
        break;
      }
      case OpKind::kScale: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += n.c0 * gy[i];
        }
        break;
      }
      case OpKind::kNeg: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] -= gy[i];
        }
        break;
      }
      case OpKind::kMatMul: {
        const Tensor& a = value_of(n.in[0]);
        const Tensor& b = value_of(n.in[1]);
        const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
        if (wants_grad(n.in[0])) {  // dA += dC * B^T
          Tensor& ga = grad_of(n.in[0]);
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t k = 0; k < q; ++k) {
              double s = 0;
              for (std::size_t j = 0; j < r; ++j) s += gy.at(i, j) * b.at(k, j);
              ga.at(i, k) += s;
            }
        }
        if (wants_grad(n.in[1])) {  // dB += A^T * dC
          Tensor& gb = grad_of(n.in[1]);
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t k = 0; k < q; ++k) {
              const double aik = a.at(i, k);
              for (std::size_t j = 0; j < r; ++j) gb.at(k, j) += aik * gy.at(i, j);
            }
        }
        break;
      }
      case OpKind::kMatVec: {
        const Tensor& m = value_of(n.in[0]);
        const Tensor& v = value_of(n.in[1]);
        const std::size_t p = m.rows(), q = m.cols();
        if (wants_grad(n.in[0])) {  // dM += dy (outer) v
          Tensor& gm = grad_of(n.in[0]);
          for (std::size_t i = 0; i < p; ++i) {
            const double gyi = gy[i];
            for (std::size_t j = 0; j < q; ++j) gm.at(i, j) += gyi * v[j];
          }
        }
        if (wants_grad(n.in[1])) {  // dv += M^T dy
          Tensor& gv = grad_of(n.in[1]);
          for (std::size_t i = 0; i < p; ++i) {
            const double gyi = gy[i];
            for (std::size_t j = 0; j < q; ++j) gv[j] += m.at(i, j) * gyi;
          }
        }
        break;
      }
      case OpKind::kTranspose: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          for (std::size_t i = 0; i < gy.rows(); ++i)
            for (std::size_t j = 0; j < gy.cols(); ++j) ga.at(j, i) += gy.at(i, j);
        }
        break;
      }
      case OpKind::kTanh: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          const Tensor& y = n.value;
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += (1.0 - y[i] * y[i]) * gy[i];
        }
        break;
      }
      case OpKind::kSigmoid: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          const Tensor& y = n.value;
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += y[i] * (1.0 - y[i]) * gy[i];
        }
        break;
      }
      case OpKind::kLog: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          const Tensor& x = value_of(n.in[0]);
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] / x[i];
        }
        break;
      }
      case OpKind::kLogFloored: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          const Tensor& x = value_of(n.in[0]);
          for (std::size_t i = 0; i < gy.numel(); ++i) {
            if (x[i] > n.c0) ga[i] += gy[i] / x[i];
          }
        }
        break;
      }
      case OpKind::kExp: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          const Tensor& y = n.value;
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += y[i] * gy[i];
        }
        break;
      }
      case OpKind::kSoftmax: {
        if (wants_grad(n.in[0])) {  // dx_i = y_i (dy_i - <dy, y>)
          Tensor& ga = grad_of(n.in[0]);
          const Tensor& y = n.value;
          double dot = 0;
          for (std::size_t i = 0; i < gy.numel(); ++i) dot += gy[i] * y[i];
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += y[i] * (gy[i] - dot);
        }
        break;
      }
      case OpKind::kMeanRows: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          const std::size_t m = ga.rows(), d = ga.cols();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += gy[j] / static_cast<double>(m);
        }
        break;
      }
      case OpKind::kSum: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gy[0];
        }
        break;
      }
      case OpKind::kDropout: {
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += n.ctx[i] * gy[i];
        }
        break;
      }
      case OpKind::kScaleRows: {
        const Tensor& x = value_of(n.in[0]);
        const Tensor& a = value_of(n.in[1]);
        if (wants_grad(n.in[0])) {
          Tensor& gx = grad_of(n.in[0]);
          for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) gx.at(i, j) += a[i] * gy.at(i, j);
        }
        if (wants_grad(n.in[1])) {
          Tensor& ga = grad_of(n.in[1]);
          for (std::size_t i = 0; i < x.rows(); ++i) {
            double s = 0;
            for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * gy.at(i, j);
            ga[i] += s;
          }
        }
        break;
      }
      case OpKind::kConcat: {
        const std::size_t na = value_of(n.in[0]).numel();
        if (wants_grad(n.in[0])) {
          Tensor& ga = grad_of(n.in[0]);
          for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
        }
        if (wants_grad(n.in[1])) {
          Tensor& gb = grad_of(n.in[1]);
          for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy[na + i];
        }
        break;
      }
      case OpKind::kStackRows: {
        const std::size_t k = n.value.cols();
        for (std::size_t r = 0; r < n.in_list.size(); ++r) {
          const int src = n.in_list[r];
          if (!wants_grad(src)) continue;
          Tensor& gr = grad_of(src);
          for (std::size_t j = 0; j < k; ++j) gr[j] += gy[r * k + j];
        }
        break;
      }
      case OpKind::kRow: {
        if (wants_grad(n.in[0])) {
          Tensor& gm = grad_of(n.in[0]);
          const std::size_t c = gm.cols();
          const std::size_t r = static_cast<std::size_t>(n.k0);
          for (std::size_t j = 0; j < c; ++j) gm[r * c + j] += gy[j];
        }
        break;
      }
      case OpKind::kPick: {
        if (wants_grad(n.in[0])) {
          grad_of(n.in[0])[static_cast<std::size_t>(n.k0)] += gy[0];
        }
        break;
      }
    }
  }

  void accumulate(int id, const Tensor& gy) {
    if (!wants_grad(id)) return;
    Tensor& g = grad_of(id);
    for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i];
  }

  std::deque<Node> nodes_;
};

namespace detail {

inline Tape* same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw error("operands belong to different tapes");
  }
  return a.tape;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw shape_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                      b.shape_str());
  }
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw shape_error(std::string(op) + ": expected rank-" + std::to_string(r) +
                      " tensor, got shape " + t.shape_str());
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& x = t->value(a);
  const Tensor& y = t->value(b);
  detail::require_same_shape(x, y, "add");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
  return t->emit(OpKind::kAdd, a, b, std::move(out));
}

inline Var add_scalar(Var a, Var s) {
  Tape* t = detail::same_tape(a, s);
  const Tensor& x = t->value(a);
  const Tensor& y = t->value(s);
  if (y.numel() != 1) {
    throw shape_error("add_scalar: second operand must have one element, got " + y.shape_str());
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[0];
  return t->emit(OpKind::kAddScalar, a, s, std::move(out));
}

inline Var add_rowvec(Var m, Var v) {
  Tape* t = detail::same_tape(m, v);
  const Tensor& x = t->value(m);
  const Tensor& y = t->value(v);
  detail::require_rank(x, 2, "add_rowvec");
  detail::require_rank(y, 1, "add_rowvec");
  if (x.cols() != y.numel()) {
    throw shape_error("add_rowvec: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
  }
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) += y[j];
  return t->emit(OpKind::kAddRowVec, m, v, std::move(out));
}

inline Var sub(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& x = t->value(a);
  const Tensor& y = t->value(b);
  detail::require_same_shape(x, y, "sub");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= y[i];
  return t->emit(OpKind::kSub, a, b, std::move(out));
}

inline Var mul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& x = t->value(a);
  const Tensor& y = t->value(b);
  detail::require_same_shape(x, y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
  return t->emit(OpKind::kMul, a, b, std::move(out));
}

inline Var scale(Var a, double c) {
  Tape* t = a.tape;
  Tensor out = t->value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  Var v = t->emit(OpKind::kScale, a, Var{t, -1}, std::move(out));
  t->nodes_.back().c0 = c;
  return v;
}

inline Var neg(Var a) {
  Tape* t = a.tape;
  Tensor out = t->value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = -out[i];
  return t->emit(OpKind::kNeg, a, Var{t, -1}, std::move(out));
}

inline Var matmul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& x = t->value(a);
  const Tensor& y = t->value(b);
  detail::require_rank(x, 2, "matmul");
  detail::require_rank(y, 2, "matmul");
  if (x.cols() != y.rows()) {
    throw shape_error("matmul: inner dimensions disagree, " + x.shape_str() + " vs " +
                      y.shape_str());
  }
  const std::size_t p = x.rows(), q = x.cols(), r = y.cols();
  Tensor out({p, r});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < q; ++k) {
      const double xik = x.at(i, k);
      if (xik == 0.0) continue;
      for (std::size_t j = 0; j < r; ++j) out.at(i, j) += xik * y.at(k, j);
    }
  return t->emit(OpKind::kMatMul, a, b, std::move(out));
}

inline Var matvec(Var m, Var v) {
  Tape* t = detail::same_tape(m, v);
  const Tensor& x = t->value(m);
  const Tensor& y = t->value(v);
  detail::require_rank(x, 2, "matvec");
  detail::require_rank(y, 1, "matvec");
  if (x.cols() != y.numel()) {
    throw shape_error("matvec: inner dimensions disagree, " + x.shape_str() + " vs " +
                      y.shape_str());
  }
  Tensor out({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0;
    const double* xr = x.data() + i * x.cols();
    for (std::size_t j = 0; j < x.cols(); ++j) s += xr[j] * y[j];
    out[i] = s;
  }
  return t->emit(OpKind::kMatVec, m, v, std::move(out));
}

inline Var transpose(Var a) {
  Tape* t = a.tape;
  const Tensor& x = t->value(a);
  detail::require_rank(x, 2, "transpose");
  Tensor out({x.cols(), x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
  return t->emit(OpKind::kTranspose, a, Var{t, -1}, std::move(out));
}

inline Var tanh(Var a) {
  Tape* t = a.tape;
  Tensor out = t->value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return t->emit(OpKind::kTanh, a, Var{t, -1}, std::move(out));
}

inline Var sigmoid(Var a) {
  Tape* t = a.tape;
  Tensor out = t->value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x = out[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return t->emit(OpKind::kSigmoid, a, Var{t, -1}, std::move(out));
}

inline Var log(Var a) {
  Tape* t = a.tape;
  Tensor out = t->value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (!(out[i] > 0.0)) {
      throw domain_error("log: non-positive entry " + std::to_string(out[i]) + " at index " +
                         std::to_string(i));
    }
    out[i] = std::log(out[i]);
  }
  return t->emit(OpKind::kLog, a, Var{t, -1}, std::move(out));
}

// log(max(x, floor)). The floor keeps loss terms finite as probabilities
// saturate; it is used only inside loss compositions, never as a general log.
inline Var log_floored(Var a, double floor) {
  Tape* t = a.tape;
  Tensor out = t->value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i] > floor ? out[i] : floor);
  Var v = t->emit(OpKind::kLogFloored, a, Var{t, -1}, std::move(out));
  t->nodes_.back().c0 = floor;
  return v;
}

inline Var exp(Var a) {
  Tape* t = a.tape;
  Tensor out = t->value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return t->emit(OpKind::kExp, a, Var{t, -1}, std::move(out));
}

inline Var softmax(Var a) {
  Tape* t = a.tape;
  const Tensor& x = t->value(a);
  detail::require_rank(x, 1, "softmax");
  double mx = x[0];
  for (std::size_t i = 1; i < x.numel(); ++i) mx = x[i] > mx ? x[i] : mx;
  Tensor out = x;
  double z = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = std::exp(out[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= z;
  return t->emit(OpKind::kSoftmax, a, Var{t, -1}, std::move(out));
}

inline Var mean_rows(Var a) {
  Tape* t = a.tape;
  const Tensor& x = t->value(a);
  detail::require_rank(x, 2, "mean_rows");
  Tensor out({x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x.at(i, j);
  for (std::size_t j = 0; j < x.cols(); ++j) out[j] /= static_cast<double>(x.rows());
  return t->emit(OpKind::kMeanRows, a, Var{t, -1}, std::move(out));
}

inline Var sum(Var a) {
  Tape* t = a.tape;
  const Tensor& x = t->value(a);
  double s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  return t->emit(OpKind::kSum, a, Var{t, -1}, Tensor::scalar(s));
}

// Inverted dropout: each entry survives with probability 1-p and is scaled by
// 1/(1-p), so evaluation mode is the identity. Training mode consumes exactly
// numel draws from rng (independently of p), in row-major entry order.
inline Var dropout(Var a, double p, RngState& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw domain_error("dropout: probability must lie in [0,1), got " + std::to_string(p));
  }
  if (!training) return a;
  Tape* t = a.tape;
  Tensor out = t->value(a);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(out.numel());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    mask[i] = next_double(rng) < p ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  Var v = t->emit(OpKind::kDropout, a, Var{t, -1}, std::move(out));
  t->nodes_.back().ctx = std::move(mask);
  return v;
}

inline Var scale_rows(Var m, Var a) {
  Tape* t = detail::same_tape(m, a);
  const Tensor& x = t->value(m);
  const Tensor& w = t->value(a);
  detail::require_rank(x, 2, "scale_rows");
  detail::require_rank(w, 1, "scale_rows");
  if (x.rows() != w.numel()) {
    throw shape_error("scale_rows: shape mismatch " + x.shape_str() + " vs " + w.shape_str());
  }
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) *= w[i];
  return t->emit(OpKind::kScaleRows, m, a, std::move(out));
}

inline Var concat(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& x = t->value(a);
  const Tensor& y = t->value(b);
  detail::require_rank(x, 1, "concat");
  detail::require_rank(y, 1, "concat");
  std::vector<double> v(x.numel() + y.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) v[i] = x[i];
  for (std::size_t i = 0; i < y.numel(); ++i) v[x.numel() + i] = y[i];
  return t->emit(OpKind::kConcat, a, b, Tensor::vector(std::move(v)));
}

inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw shape_error("stack_rows: empty input");
  Tape* t = rows[0].tape;
  const std::size_t k = t->value(rows[0]).numel();
  Tensor out({rows.size(), k});
  bool needs_grad = false;
  std::vector<int> ids;
  ids.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    detail::same_tape(rows[0], rows[r]);
    const Tensor& x = t->value(rows[r]);
    detail::require_rank(x, 1, "stack_rows");
    if (x.numel() != k) {
      throw shape_error("stack_rows: row length mismatch " + std::to_string(x.numel()) + " vs " +
                        std::to_string(k));
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[j];
    needs_grad = needs_grad || t->node(rows[r]).requires_grad;
    ids.push_back(rows[r].id);
  }
  Tape::Node n;
  n.kind = OpKind::kStackRows;
  n.in_list = std::move(ids);
  n.value = std::move(out);
  n.requires_grad = needs_grad;
  return t->push(std::move(n));
}

inline Var row(Var m, std::size_t i) {
  Tape* t = m.tape;
  const Tensor& x = t->value(m);
  detail::require_rank(x, 2, "row");
  if (i >= x.rows()) {
    throw domain_error("row: index " + std::to_string(i) + " out of range for " + x.shape_str());
  }
  Tensor out({x.cols()});
  for (std::size_t j = 0; j < x.cols(); ++j) out[j] = x.at(i, j);
  Var v = t->emit(OpKind::kRow, m, Var{t, -1}, std::move(out));
  t->nodes_.back().k0 = static_cast<std::int64_t>(i);
  return v;
}

inline Var pick(Var v, std::size_t i) {
  Tape* t = v.tape;
  const Tensor& x = t->value(v);
  detail::require_rank(x, 1, "pick");
  if (i >= x.numel()) {
    throw domain_error("pick: index " + std::to_string(i) + " out of range for " + x.shape_str());
  }
  Var out = t->emit(OpKind::kPick, v, Var{t, -1}, Tensor::scalar(x[i]));
  t->nodes_.back().k0 = static_cast<std::int64_t>(i);
  return out;
}

}  // namespace tmlga
