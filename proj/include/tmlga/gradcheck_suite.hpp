// SPDX-License-Identifier: Apache-2.0
//
// Named gradient-check cases covering every differentiable operation and the
// composite model paths, on tiny random instances. Shared by the `gradcheck`
// CLI subcommand and the acceptance suite.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tmlga/gradcheck.hpp"
#include "tmlga/localization.hpp"
#include "tmlga/model.hpp"
#include "tmlga/rng.hpp"

namespace tmlga {

struct GradCheckCase {
  std::string name;
  std::function<double(std::uint64_t seed)> run;  // one instance -> max rel err
};

namespace detail {

inline Tensor random_tensor(std::vector<std::size_t> shape, RngState& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

inline EmbeddingTable random_embeddings(std::size_t vocab, std::size_t dim, RngState& rng) {
  EmbeddingTable e;
  e.dim = dim;
  e.rows.resize(vocab * dim);
  for (double& v : e.rows) v = uniform(rng, -1.0, 1.0);
  for (std::size_t j = 0; j < dim; ++j) e.rows[j] = 0.0;  // <pad> row
  return e;
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_suite() {
  using detail::random_tensor;
  std::vector<GradCheckCase> cases;
  auto add_case = [&](std::string name, std::function<double(std::uint64_t)> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  // -- single operations ----------------------------------------------------
  add_case("matmul", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); }, in);
  });
  add_case("matvec", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({3}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) { return sum(matvec(v[0], v[1])); }, in);
  });
  add_case("transpose", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(transpose(v[0]), transpose(v[1])));
        },
        in);
  });
  add_case("add/sub/mul/neg/scale", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({6}, rng), random_tensor({6}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(add(v[0], v[1]), sub(scale(v[0], 0.5), neg(v[1]))));
        },
        in);
  });
  add_case("add_scalar", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({5}, rng), random_tensor({1}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) {
          return sum(tanh(add_scalar(v[0], v[1])));
        },
        in);
  });
  add_case("add_rowvec", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) {
          return sum(tanh(add_rowvec(v[0], v[1])));
        },
        in);
  });
  add_case("tanh", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({8}, rng, -2.0, 2.0)};
    return grad_check([](Tape&, const std::vector<Var>& v) { return sum(tanh(v[0])); }, in);
  });
  add_case("sigmoid", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({8}, rng, -3.0, 3.0)};
    return grad_check([](Tape&, const std::vector<Var>& v) { return sum(sigmoid(v[0])); }, in);
  });
  add_case("log", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({6}, rng, 0.2, 3.0)};
    return grad_check([](Tape&, const std::vector<Var>& v) { return sum(log(v[0])); }, in);
  });
  add_case("log_floored", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({6}, rng, 0.2, 3.0)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) { return sum(log_floored(v[0], 1e-12)); }, in);
  });
  add_case("exp", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({6}, rng, -1.5, 1.5)};
    return grad_check([](Tape&, const std::vector<Var>& v) { return sum(exp(v[0])); }, in);
  });
  add_case("softmax", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({7}, rng, -2.0, 2.0)};
    const std::size_t k = static_cast<std::size_t>(next_below(rng, 7));
    return grad_check(
        [k](Tape&, const std::vector<Var>& v) { return pick(softmax(v[0]), k); }, in);
  });
  add_case("mean_rows", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({3}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(mean_rows(v[0]), v[1]));
        },
        in);
  });
  add_case("dropout", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({3, 4}, rng)};
    const RngState mask_rng{seed ^ 0x5DEECE66DULL, 0};
    return grad_check(
        [mask_rng](Tape&, const std::vector<Var>& v) {
          RngState r = mask_rng;  // identical mask on every evaluation
          return sum(tanh(dropout(v[0], 0.4, r, true)));
        },
        in);
  });
  add_case("scale_rows", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({4}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) { return sum(tanh(scale_rows(v[0], v[1]))); }, in);
  });
  add_case("concat/stack_rows/row/pick", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    std::vector<Tensor> in{random_tensor({3}, rng), random_tensor({3}, rng),
                           random_tensor({2, 6}, rng)};
    return grad_check(
        [](Tape&, const std::vector<Var>& v) {
          Var stacked = stack_rows({concat(v[0], v[1]), row(v[2], 1)});
          return add(sum(tanh(stacked)), pick(row(stacked, 0), 2));
        },
        in);
  });

  // -- composite paths ------------------------------------------------------
  add_case("gru_cell_step", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    const std::size_t u = 3, x = 4;
    GruCellParams p = init_gru_cell(u, x, rng);
    std::vector<Tensor> in{p.W_z, p.W_r, p.W_h, p.U_z, p.U_r,
                           p.U_h, p.b_z, p.b_r, p.b_h,
                           random_tensor({x}, rng), random_tensor({u}, rng, -0.9, 0.9)};
    return grad_check(
        [](Tape& tape, const std::vector<Var>& v) {
          std::size_t i = 0;
          GruCellVars cell = detail::take_gru_vars(v, i);
          return sum(gru_cell_step(tape, v[9], v[10], cell));
        },
        in);
  });
  add_case("encode_sentence", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    const std::size_t u = 3, emb = 4;
    SentenceEncoderParams p = init_sentence_encoder(u, emb, rng);
    EmbeddingTable table = detail::random_embeddings(6, emb, rng);
    std::vector<Tensor> in;
    auto push_cell = [&](const GruCellParams& c) {
      for (const Tensor* t : {&c.W_z, &c.W_r, &c.W_h, &c.U_z, &c.U_r, &c.U_h,
                              &c.b_z, &c.b_r, &c.b_h})
        in.push_back(*t);
    };
    push_cell(p.forward_cell);
    push_cell(p.backward_cell);
    const std::vector<int> tokens{2, 4, 3};
    return grad_check(
        [table, tokens](Tape& tape, const std::vector<Var>& v) {
          std::size_t i = 0;
          SentenceEncoderVars enc{detail::take_gru_vars(v, i), detail::take_gru_vars(v, i)};
          return sum(encode_sentence(tape, tokens, table, enc));
        },
        in);
  });
  add_case("project->filter->attention->L_att", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    const std::size_t n = 6, d = 4, d_v = 5, d_s = 6;
    AttentionParams p = init_attention(d, d_v, d_s, rng);
    std::vector<Tensor> in{p.P_v,     p.b_v,
                           p.P_s,     p.b_s,
                           p.W_theta, p.b_theta,
                           random_tensor({n, d_v}, rng), random_tensor({d_s}, rng)};
    return grad_check(
        [](Tape& tape, const std::vector<Var>& v) {
          AttentionVars a{v[0], v[1], v[2], v[3], v[4], v[5]};
          Projected proj = project(tape, v[6], v[7], a);
          Var theta = dynamic_filter(tape, proj.h_d, a);
          AttentionOutput att = guided_attention(tape, proj.G_d, theta);
          return attention_loss(tape, att.A, 2, 4);
        },
        in);
  });

  auto localization_inputs = [](std::uint64_t seed, std::size_t n, std::size_t d, std::size_t u,
                                std::vector<Tensor>& in) {
    RngState rng{seed, 0};
    LocalizationParams p = init_localization(u, d, rng);
    auto push_cell = [&](const GruCellParams& c) {
      for (const Tensor* t : {&c.W_z, &c.W_r, &c.W_h, &c.U_z, &c.U_r, &c.U_h,
                              &c.b_z, &c.b_r, &c.b_h})
        in.push_back(*t);
    };
    push_cell(p.layer1_fwd);
    push_cell(p.layer1_bwd);
    push_cell(p.layer2_fwd);
    push_cell(p.layer2_bwd);
    in.push_back(p.w_start);
    in.push_back(p.b_start);
    in.push_back(p.w_end);
    in.push_back(p.b_end);
    in.push_back(detail::random_tensor({n, d}, rng));
  };
  auto localize_from = [](Tape& tape, const std::vector<Var>& v) {
    std::size_t i = 0;
    LocalizationVars loc;
    loc.layer1_fwd = detail::take_gru_vars(v, i);
    loc.layer1_bwd = detail::take_gru_vars(v, i);
    loc.layer2_fwd = detail::take_gru_vars(v, i);
    loc.layer2_bwd = detail::take_gru_vars(v, i);
    loc.w_start = v[i++];
    loc.b_start = v[i++];
    loc.w_end = v[i++];
    loc.b_end = v[i++];
    RngState unused;
    return localize(tape, v[i], loc, unused, /*training=*/false);
  };

  add_case("localize->L_KL", [localization_inputs, localize_from](std::uint64_t seed) {
    const std::size_t n = 6;
    std::vector<Tensor> in;
    localization_inputs(seed, n, 4, 3, in);
    const SoftLabels labels = make_soft_labels(2, 5, n, 1.0);
    return grad_check(
        [&](Tape& tape, const std::vector<Var>& v) {
          return kl_loss(tape, localize_from(tape, v), labels);
        },
        in);
  });
  add_case("localize->L_NLL", [localization_inputs, localize_from](std::uint64_t seed) {
    std::vector<Tensor> in;
    localization_inputs(seed, 6, 4, 3, in);
    return grad_check(
        [&](Tape& tape, const std::vector<Var>& v) {
          return nll_loss(tape, localize_from(tape, v), 2, 5);
        },
        in);
  });

  add_case("full loss (KL + L_att)", [](std::uint64_t seed) {
    RngState rng{seed, 0};
    const std::size_t n = 6, d = 4, u = 3, emb = 4, d_v = 5;
    ModelDims dims{emb, d_v, u, d};
    ModelParams params = init_model(dims, rng);
    EmbeddingTable table = detail::random_embeddings(6, emb, rng);
    Tensor features = detail::random_tensor({n, d_v}, rng);
    std::vector<Tensor> in = param_tensors(params);
    const std::vector<int> tokens{2, 3, 5};
    return grad_check(
        [&](Tape& tape, const std::vector<Var>& v) {
          ModelVars vars = model_vars_from(v);
          RngState unused;
          SampleForward fwd = forward_sample(tape, vars, features, tokens, table, 2, 4,
                                             LossOptions{}, unused, /*training=*/false);
          return fwd.total;
        },
        in);
  });

  return cases;
}

// Max relative error over `instances` seeded instances of one case.
inline double run_gradcheck_case(const GradCheckCase& c, int instances,
                                 std::uint64_t base_seed = 42) {
  double worst = 0;
  for (int i = 0; i < instances; ++i) {
    const double err = c.run(base_seed + static_cast<std::uint64_t>(i) * 7919);
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace tmlga
