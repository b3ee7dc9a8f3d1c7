// SPDX-License-Identifier: Apache-2.0
//
// Dynamic-filter guided attention. Both modalities are projected to a shared
// space of size d; a query-conditioned filter theta = tanh(W x + b) is matched
// against every projected video feature; softmax of the scaled inner products
// gives the attention weights, which also re-scale the projected features.
// The guidance loss penalizes attention mass outside the annotated span.

#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "tmlga/rng.hpp"
#include "tmlga/tape.hpp"
#include "tmlga/tensor.hpp"

namespace tmlga {

struct AttentionParams {
  Tensor P_v, b_v;      // d x d_v, d
  Tensor P_s, b_s;      // d x d_s, d
  Tensor W_theta, b_theta;  // d x d, d

  std::size_t shared_dim() const { return P_v.rows(); }
};

// Matrices uniform(-k, k) with k = 1/sqrt(fan_in), biases zero.
inline AttentionParams init_attention(std::size_t d, std::size_t d_v, std::size_t d_s,
                                      RngState& rng) {
  auto mat = [&](std::size_t r, std::size_t c) {
    const double k = 1.0 / std::sqrt(static_cast<double>(c));
    Tensor t({r, c});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, -k, k);
    return t;
  };
  AttentionParams p;
  p.P_v = mat(d, d_v);
  p.b_v = Tensor({d});
  p.P_s = mat(d, d_s);
  p.b_s = Tensor({d});
  p.W_theta = mat(d, d);
  p.b_theta = Tensor({d});
  return p;
}

struct AttentionVars {
  Var P_v, b_v, P_s, b_s, W_theta, b_theta;
};

inline AttentionVars bind_attention(Tape& tape, const AttentionParams& p,
                                    bool requires_grad = true) {
  AttentionVars v;
  v.P_v = tape.leaf(p.P_v, requires_grad);
  v.b_v = tape.leaf(p.b_v, requires_grad);
  v.P_s = tape.leaf(p.P_s, requires_grad);
  v.b_s = tape.leaf(p.b_s, requires_grad);
  v.W_theta = tape.leaf(p.W_theta, requires_grad);
  v.b_theta = tape.leaf(p.b_theta, requires_grad);
  return v;
}

struct Projected {
  Var G_d;  // n x d
  Var h_d;  // d
};

// Affine maps only; the nonlinearity lives in the filter.
inline Projected project(Tape& tape, Var G, Var h_bar, const AttentionVars& p) {
  Var G_d = add_rowvec(matmul(G, transpose(p.P_v)), p.b_v);
  Var h_d = add(matvec(p.P_s, h_bar), p.b_s);
  (void)tape;
  return Projected{G_d, h_d};
}

inline Var dynamic_filter(Tape& tape, Var h_d, const AttentionVars& p) {
  (void)tape;
  return tanh(add(matvec(p.W_theta, h_d), p.b_theta));
}

struct AttentionOutput {
  Var A;      // n, sums to 1
  Var G_bar;  // n x d, row i scaled by a_i
};

// Scores are <G_d[i], theta> / sqrt(n); n is the number of video features.
inline AttentionOutput guided_attention(Tape& tape, Var G_d, Var theta_vec) {
  const std::size_t n = tape.value(G_d).rows();
  Var scores = scale(matvec(G_d, theta_vec), 1.0 / std::sqrt(static_cast<double>(n)));
  Var A = softmax(scores);
  Var G_bar = scale_rows(G_d, A);
  return AttentionOutput{A, G_bar};
}

// Sum of -log(1 - a_i) over positions strictly outside [tau_s, tau_e]
// (1-based, inclusive endpoints). 1 - a_i is floored at 1e-12 before the log.
inline Var attention_loss(Tape& tape, Var A, std::size_t tau_s, std::size_t tau_e) {
  const std::size_t n = tape.value(A).numel();
  if (tau_s < 1 || tau_s > tau_e || tau_e > n) {
    throw domain_error("attention_loss: invalid span [" + std::to_string(tau_s) + ", " +
                       std::to_string(tau_e) + "] for n=" + std::to_string(n));
  }
  Tensor mask({n});
  for (std::size_t i = 1; i <= n; ++i) {
    mask[i - 1] = (i >= tau_s && i <= tau_e) ? 0.0 : 1.0;
  }
  Var outside = tape.constant(std::move(mask));
  Var ones = tape.constant(Tensor::full({n}, 1.0));
  return neg(sum(mul(outside, log_floored(sub(ones, A), 1e-12))));
}

// Plain-value twin of attention_loss for evaluation-side code and tests.
inline double attention_loss_value(const std::vector<double>& A, std::size_t tau_s,
                                   std::size_t tau_e) {
  const std::size_t n = A.size();
  if (tau_s < 1 || tau_s > tau_e || tau_e > n) {
    throw domain_error("attention_loss: invalid span [" + std::to_string(tau_s) + ", " +
                       std::to_string(tau_e) + "] for n=" + std::to_string(n));
  }
  double loss = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i >= tau_s && i <= tau_e) continue;
    double q = 1.0 - A[i - 1];
    if (q < 1e-12) q = 1e-12;
    loss -= std::log(q);
  }
  return loss;
}

}  // namespace tmlga
