// SPDX-License-Identifier: Apache-2.0
//
// Localization layer: a 2-layer bidirectional GRU over the attended features
// (dropout between the layers), two per-position scalar heads, and softmax
// over positions, giving categorical start/end distributions over [1, n].
// Targets are quantized Gaussians centered at the annotated indices; training
// minimizes D_KL(predicted || target) for both boundaries, or the ablation's
// negative log likelihood at the hard indices.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tmlga/gru.hpp"
#include "tmlga/rng.hpp"
#include "tmlga/tape.hpp"
#include "tmlga/tensor.hpp"

namespace tmlga {

struct LocalizationParams {
  GruCellParams layer1_fwd, layer1_bwd;  // input d,  hidden u
  GruCellParams layer2_fwd, layer2_bwd;  // input 2u, hidden u
  Tensor w_start, b_start;               // 2u, scalar
  Tensor w_end, b_end;
  double dropout_p = 0.5;  // between the two layers, training only

  std::size_t hidden_size() const { return layer1_fwd.hidden_size(); }
};

inline LocalizationParams init_localization(std::size_t hidden, std::size_t input,
                                            RngState& rng) {
  LocalizationParams p;
  p.layer1_fwd = init_gru_cell(hidden, input, rng);
  p.layer1_bwd = init_gru_cell(hidden, input, rng);
  p.layer2_fwd = init_gru_cell(hidden, 2 * hidden, rng);
  p.layer2_bwd = init_gru_cell(hidden, 2 * hidden, rng);
  const double k = 1.0 / std::sqrt(static_cast<double>(2 * hidden));
  auto head = [&]() {
    Tensor t({2 * hidden});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, -k, k);
    return t;
  };
  p.w_start = head();
  p.b_start = Tensor::scalar(0.0);
  p.w_end = head();
  p.b_end = Tensor::scalar(0.0);
  return p;
}

struct LocalizationVars {
  GruCellVars layer1_fwd, layer1_bwd, layer2_fwd, layer2_bwd;
  Var w_start, b_start, w_end, b_end;
  double dropout_p = 0.5;
};

inline LocalizationVars bind_localization(Tape& tape, const LocalizationParams& p,
                                          bool requires_grad = true) {
  LocalizationVars v;
  v.layer1_fwd = bind_gru_cell(tape, p.layer1_fwd, requires_grad);
  v.layer1_bwd = bind_gru_cell(tape, p.layer1_bwd, requires_grad);
  v.layer2_fwd = bind_gru_cell(tape, p.layer2_fwd, requires_grad);
  v.layer2_bwd = bind_gru_cell(tape, p.layer2_bwd, requires_grad);
  v.w_start = tape.leaf(p.w_start, requires_grad);
  v.b_start = tape.leaf(p.b_start, requires_grad);
  v.w_end = tape.leaf(p.w_end, requires_grad);
  v.b_end = tape.leaf(p.b_end, requires_grad);
  v.dropout_p = p.dropout_p;
  return v;
}

struct SpanDistributionVars {
  Var start;  // length n, sums to 1
  Var end;
};

inline SpanDistributionVars localize(Tape& tape, Var g_bar, const LocalizationVars& p,
                                     RngState& rng, bool training) {
  Var H1 = bigru_forward(tape, g_bar, p.layer1_fwd, p.layer1_bwd);
  Var H1d = dropout(H1, p.dropout_p, rng, training);
  Var H2 = bigru_forward(tape, H1d, p.layer2_fwd, p.layer2_bwd);
  Var start = softmax(add_scalar(matvec(H2, p.w_start), p.b_start));
  Var end = softmax(add_scalar(matvec(H2, p.w_end), p.b_end));
  return SpanDistributionVars{start, end};
}

// ---------------------------------------------------------------------------
// Distributions as plain values

struct SpanDistributions {
  std::vector<double> start;
  std::vector<double> end;
};

struct SoftLabels {
  std::vector<double> start;
  std::vector<double> end;
  double sigma = 1.0;
};

// Gaussian density evaluated at the integer positions 1..n and normalized.
// mu is a 1-based index; sigma is in index units.
inline std::vector<double> quantized_gaussian(double mu, double sigma, std::size_t n) {
  if (!(mu >= 1.0) || !(mu <= static_cast<double>(n))) {
    throw domain_error("quantized_gaussian: mu=" + std::to_string(mu) + " outside [1, " +
                       std::to_string(n) + "]");
  }
  if (!(sigma > 0)) {
    throw domain_error("quantized_gaussian: sigma must be > 0, got " + std::to_string(sigma));
  }
  std::vector<double> p(n);
  // The density is strictly positive everywhere; keep the float image that
  // way by flooring weights the exp underflows to zero.
  double z = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double d = (static_cast<double>(i) - mu) / sigma;
    p[i - 1] = std::max(std::exp(-0.5 * d * d), 1e-300);
    z += p[i - 1];
  }
  for (double& v : p) v /= z;
  return p;
}

inline SoftLabels make_soft_labels(std::size_t tau_s, std::size_t tau_e, std::size_t n,
                                   double sigma = 1.0) {
  SoftLabels labels;
  labels.start = quantized_gaussian(static_cast<double>(tau_s), sigma, n);
  labels.end = quantized_gaussian(static_cast<double>(tau_e), sigma, n);
  labels.sigma = sigma;
  return labels;
}

// ---------------------------------------------------------------------------
// Losses

// Direction of the KL divergence. The printed form is D_KL(pred || target);
// the reverse is provided for experimentation.
enum class KlDirection { kPredTarget, kTargetPred };

constexpr double kLossFloor = 1e-12;

// D_KL(p || q) = sum_i p_i log(p_i / q_i) with p log p := 0 at p = 0 and q
// floored at 1e-12. target must be strictly positive for finite values.
inline double kl_divergence_value(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) {
    throw shape_error("kl: length mismatch " + std::to_string(p.size()) + " vs " +
                      std::to_string(q.size()));
  }
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    const double qf = q[i] > kLossFloor ? q[i] : kLossFloor;
    d += p[i] * (std::log(p[i]) - std::log(qf));
  }
  return d;
}

inline double kl_loss(const SpanDistributions& pred, const SoftLabels& target,
                      KlDirection dir = KlDirection::kPredTarget) {
  if (dir == KlDirection::kPredTarget) {
    return kl_divergence_value(pred.start, target.start) +
           kl_divergence_value(pred.end, target.end);
  }
  return kl_divergence_value(target.start, pred.start) +
         kl_divergence_value(target.end, pred.end);
}

// Tape node for one D_KL component; `target` is a constant distribution.
inline Var kl_divergence(Tape& tape, Var pred, const std::vector<double>& target,
                         KlDirection dir = KlDirection::kPredTarget) {
  const std::size_t n = tape.value(pred).numel();
  if (target.size() != n) {
    throw shape_error("kl: length mismatch " + std::to_string(n) + " vs " +
                      std::to_string(target.size()));
  }
  std::vector<double> logq(n);
  for (std::size_t i = 0; i < n; ++i) {
    logq[i] = std::log(target[i] > kLossFloor ? target[i] : kLossFloor);
  }
  if (dir == KlDirection::kPredTarget) {
    Var log_q = tape.constant(Tensor::vector(std::move(logq)));
    return sum(mul(pred, sub(log_floored(pred, kLossFloor), log_q)));
  }
  // sum_i q_i (log q_i - log p_i)
  Var q = tape.constant(Tensor::vector(std::vector<double>(target)));
  Var log_q = tape.constant(Tensor::vector(std::move(logq)));
  return sum(mul(q, sub(log_q, log_floored(pred, kLossFloor))));
}

inline Var kl_loss(Tape& tape, const SpanDistributionVars& pred, const SoftLabels& target,
                   KlDirection dir = KlDirection::kPredTarget) {
  return add(kl_divergence(tape, pred.start, target.start, dir),
             kl_divergence(tape, pred.end, target.end, dir));
}

// Negative log of the predicted mass at the hard ground-truth indices
// (1-based), floored at 1e-12.
inline double nll_loss(const SpanDistributions& pred, std::size_t tau_s, std::size_t tau_e) {
  const std::size_t n = pred.start.size();
  if (tau_s < 1 || tau_s > n || tau_e < 1 || tau_e > pred.end.size()) {
    throw domain_error("nll_loss: index out of range [1, " + std::to_string(n) + "]");
  }
  const double ps = std::max(pred.start[tau_s - 1], kLossFloor);
  const double pe = std::max(pred.end[tau_e - 1], kLossFloor);
  return -std::log(ps) - std::log(pe);
}

inline Var nll_loss(Tape& tape, const SpanDistributionVars& pred, std::size_t tau_s,
                    std::size_t tau_e) {
  const std::size_t n = tape.value(pred.start).numel();
  if (tau_s < 1 || tau_s > n || tau_e < 1 || tau_e > tape.value(pred.end).numel()) {
    throw domain_error("nll_loss: index out of range [1, " + std::to_string(n) + "]");
  }
  Var ls = log_floored(pick(pred.start, tau_s - 1), kLossFloor);
  Var le = log_floored(pick(pred.end, tau_e - 1), kLossFloor);
  return neg(add(ls, le));
}

inline double total_loss(double l_main, double l_att, bool use_attention) {
  return use_attention ? l_main + l_att : l_main;
}

inline Var total_loss(Tape& tape, Var l_main, Var l_att, bool use_attention) {
  (void)tape;
  return use_attention ? add(l_main, l_att) : l_main;
}

// ---------------------------------------------------------------------------
// Decoding

// Independent argmax per distribution, 1-based, ties broken by the smallest
// index. No ordering constraint: the end may precede the start.
inline std::pair<std::size_t, std::size_t> predict_span(const SpanDistributions& pred) {
  auto arg = [](const std::vector<double>& p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p[i] > p[best]) best = i;
    }
    return best + 1;
  };
  return {arg(pred.start), arg(pred.end)};
}

}  // namespace tmlga
