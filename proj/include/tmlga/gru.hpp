// SPDX-License-Identifier: Apache-2.0
//
// Gated recurrent unit cell and bidirectional wrapper, built on the tape.
// Convention used throughout, with the update gate carrying the old state:
//   z = sigmoid(W_z x + U_z h + b_z)
//   r = sigmoid(W_r x + U_r h + b_r)
//   h~ = tanh(W_h x + U_h (r . h) + b_h)
//   h' = (1 - z) . h~ + z . h

#pragma once

#include <cmath>
#include <vector>

#include "tmlga/rng.hpp"
#include "tmlga/tape.hpp"
#include "tmlga/tensor.hpp"

namespace tmlga {

// Input-to-hidden matrices are u x x, hidden-to-hidden u x u, biases u.
struct GruCellParams {
  Tensor W_z, W_r, W_h;
  Tensor U_z, U_r, U_h;
  Tensor b_z, b_r, b_h;

  std::size_t hidden_size() const { return W_z.rows(); }
  std::size_t input_size() const { return W_z.cols(); }
};

// Matrices uniform(-k, k) with k = 1/sqrt(u), biases zero.
inline GruCellParams init_gru_cell(std::size_t hidden, std::size_t input, RngState& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto mat = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, -k, k);
    return t;
  };
  GruCellParams p;
  p.W_z = mat(hidden, input);
  p.W_r = mat(hidden, input);
  p.W_h = mat(hidden, input);
  p.U_z = mat(hidden, hidden);
  p.U_r = mat(hidden, hidden);
  p.U_h = mat(hidden, hidden);
  p.b_z = Tensor({hidden});
  p.b_r = Tensor({hidden});
  p.b_h = Tensor({hidden});
  return p;
}

struct GruCellVars {
  Var W_z, W_r, W_h;
  Var U_z, U_r, U_h;
  Var b_z, b_r, b_h;
};

inline GruCellVars bind_gru_cell(Tape& tape, const GruCellParams& p, bool requires_grad = true) {
  GruCellVars v;
  v.W_z = tape.leaf(p.W_z, requires_grad);
  v.W_r = tape.leaf(p.W_r, requires_grad);
  v.W_h = tape.leaf(p.W_h, requires_grad);
  v.U_z = tape.leaf(p.U_z, requires_grad);
  v.U_r = tape.leaf(p.U_r, requires_grad);
  v.U_h = tape.leaf(p.U_h, requires_grad);
  v.b_z = tape.leaf(p.b_z, requires_grad);
  v.b_r = tape.leaf(p.b_r, requires_grad);
  v.b_h = tape.leaf(p.b_h, requires_grad);
  return v;
}

inline Var gru_cell_step(Tape& tape, Var x, Var h, const GruCellVars& p) {
  (void)tape;
  Var z = sigmoid(add(add(matvec(p.W_z, x), matvec(p.U_z, h)), p.b_z));
  Var r = sigmoid(add(add(matvec(p.W_r, x), matvec(p.U_r, h)), p.b_r));
  Var h_tilde = tanh(add(add(matvec(p.W_h, x), matvec(p.U_h, mul(r, h))), p.b_h));
  Var keep_old = mul(z, h);
  Var ones = h.tape->constant(Tensor::full(h.tape->value(h).shape(), 1.0));
  return add(mul(sub(ones, z), h_tilde), keep_old);
}

// Row j of the result is concat(forward state after x_1..x_j,
// backward state after x_m..x_j). Initial hidden states are zero.
inline Var bigru_forward(Tape& tape, const std::vector<Var>& inputs, const GruCellVars& fwd,
                         const GruCellVars& bwd) {
  if (inputs.empty()) throw shape_error("bigru_forward: empty input sequence");
  const std::size_t m = inputs.size();
  const std::size_t u = tape.value(fwd.b_z).numel();

  std::vector<Var> forward_states(m), backward_states(m);
  Var h = tape.constant(Tensor::zeros({u}));
  for (std::size_t j = 0; j < m; ++j) {
    h = gru_cell_step(tape, inputs[j], h, fwd);
    forward_states[j] = h;
  }
  h = tape.constant(Tensor::zeros({u}));
  for (std::size_t j = m; j-- > 0;) {
    h = gru_cell_step(tape, inputs[j], h, bwd);
    backward_states[j] = h;
  }
  std::vector<Var> rows;
  rows.reserve(m);
  for (std::size_t j = 0; j < m; ++j) rows.push_back(concat(forward_states[j], backward_states[j]));
  return stack_rows(rows);
}

// Convenience overload taking the inputs as an m x x matrix node.
inline Var bigru_forward(Tape& tape, Var X, const GruCellVars& fwd, const GruCellVars& bwd) {
  const std::size_t m = tape.value(X).rows();
  std::vector<Var> rows;
  rows.reserve(m);
  for (std::size_t j = 0; j < m; ++j) rows.push_back(row(X, j));
  return bigru_forward(tape, rows, fwd, bwd);
}

}  // namespace tmlga
