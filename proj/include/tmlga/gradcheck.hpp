// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification harness. Rebuilds the tape per evaluation,
// so the builder must be deterministic across calls (stochastic pieces such
// as dropout must be driven from an RngState copied afresh inside the
// builder).

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "tmlga/tape.hpp"
#include "tmlga/tensor.hpp"

namespace tmlga {

// Builds a scalar loss from leaf variables bound to the given inputs.
using TapeBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares reverse-mode gradients against central differences
// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate, and returns
// max |analytic - numeric| / max(1, |analytic|, |numeric|).
// A NaN in either estimate is reported as +inf.
inline double grad_check(const TapeBuilder& f, const std::vector<Tensor>& inputs,
                         double step = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, /*requires_grad=*/true));
    Var loss = f(tape, leaves);
    tape.backward(loss);
    for (Var v : leaves) analytic.push_back(tape.grad(v));
  }

  auto eval = [&](const std::vector<Tensor>& at) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(at.size());
    for (const Tensor& t : at) leaves.push_back(tape.leaf(t, /*requires_grad=*/false));
    return tape.value(f(tape, leaves))[0];
  };

  double max_rel = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double x0 = inputs[i][j];
      probe[i][j] = x0 + step;
      const double fp = eval(probe);
      probe[i][j] = x0 - step;
      const double fm = eval(probe);
      probe[i][j] = x0;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i][j];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        return std::numeric_limits<double>::infinity();
      }
      double denom = 1.0;
      if (std::fabs(a) > denom) denom = std::fabs(a);
      if (std::fabs(numeric) > denom) denom = std::fabs(numeric);
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace tmlga
