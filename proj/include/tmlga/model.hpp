// SPDX-License-Identifier: Apache-2.0
//
// Whole-model parameter aggregate and the single-sample forward pass wiring
// sentence encoder -> projection -> dynamic filter -> guided attention ->
// localization -> losses.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tmlga/attention.hpp"
#include "tmlga/dataio.hpp"
#include "tmlga/localization.hpp"
#include "tmlga/sentence_encoder.hpp"
#include "tmlga/tape.hpp"

namespace tmlga {

struct ModelDims {
  std::size_t emb_dim = 0;  // word embedding width (from the table)
  std::size_t d_v = 0;      // video feature width (from the data)
  std::size_t u = 256;      // GRU hidden size, both encoders
  std::size_t d = 256;      // shared attention space
};

struct ModelParams {
  ModelDims dims;
  SentenceEncoderParams sentenc;
  AttentionParams attn;
  LocalizationParams loc;
};

inline ModelParams init_model(const ModelDims& dims, RngState& rng) {
  ModelParams p;
  p.dims = dims;
  p.sentenc = init_sentence_encoder(dims.u, dims.emb_dim, rng);
  p.attn = init_attention(dims.d, dims.d_v, 2 * dims.u, rng);
  p.loc = init_localization(dims.u, dims.d, rng);
  return p;
}

struct ModelVars {
  SentenceEncoderVars sentenc;
  AttentionVars attn;
  LocalizationVars loc;
};

inline ModelVars bind_model(Tape& tape, const ModelParams& p, bool requires_grad = true) {
  ModelVars v;
  v.sentenc = bind_sentence_encoder(tape, p.sentenc, requires_grad);
  v.attn = bind_attention(tape, p.attn, requires_grad);
  v.loc = bind_localization(tape, p.loc, requires_grad);
  return v;
}

// ---------------------------------------------------------------------------
// Uniform parameter enumeration. param_refs and param_vars traverse in the
// same fixed order; Adam state and checkpoints index by this order.

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

namespace detail {

inline void append_gru_refs(const std::string& prefix, GruCellParams& c,
                            std::vector<ParamRef>& out) {
  out.push_back({prefix + ".W_z", &c.W_z});
  out.push_back({prefix + ".W_r", &c.W_r});
  out.push_back({prefix + ".W_h", &c.W_h});
  out.push_back({prefix + ".U_z", &c.U_z});
  out.push_back({prefix + ".U_r", &c.U_r});
  out.push_back({prefix + ".U_h", &c.U_h});
  out.push_back({prefix + ".b_z", &c.b_z});
  out.push_back({prefix + ".b_r", &c.b_r});
  out.push_back({prefix + ".b_h", &c.b_h});
}

inline void append_gru_vars(const GruCellVars& c, std::vector<Var>& out) {
  out.insert(out.end(), {c.W_z, c.W_r, c.W_h, c.U_z, c.U_r, c.U_h, c.b_z, c.b_r, c.b_h});
}

}  // namespace detail

inline std::vector<ParamRef> param_refs(ModelParams& p) {
  std::vector<ParamRef> out;
  detail::append_gru_refs("sentenc.fwd", p.sentenc.forward_cell, out);
  detail::append_gru_refs("sentenc.bwd", p.sentenc.backward_cell, out);
  out.push_back({"attn.P_v", &p.attn.P_v});
  out.push_back({"attn.b_v", &p.attn.b_v});
  out.push_back({"attn.P_s", &p.attn.P_s});
  out.push_back({"attn.b_s", &p.attn.b_s});
  out.push_back({"attn.W_theta", &p.attn.W_theta});
  out.push_back({"attn.b_theta", &p.attn.b_theta});
  detail::append_gru_refs("loc.l1.fwd", p.loc.layer1_fwd, out);
  detail::append_gru_refs("loc.l1.bwd", p.loc.layer1_bwd, out);
  detail::append_gru_refs("loc.l2.fwd", p.loc.layer2_fwd, out);
  detail::append_gru_refs("loc.l2.bwd", p.loc.layer2_bwd, out);
  out.push_back({"loc.w_start", &p.loc.w_start});
  out.push_back({"loc.b_start", &p.loc.b_start});
  out.push_back({"loc.w_end", &p.loc.w_end});
  out.push_back({"loc.b_end", &p.loc.b_end});
  return out;
}

inline std::vector<Var> param_vars(const ModelVars& v) {
  std::vector<Var> out;
  detail::append_gru_vars(v.sentenc.forward_cell, out);
  detail::append_gru_vars(v.sentenc.backward_cell, out);
  out.insert(out.end(),
             {v.attn.P_v, v.attn.b_v, v.attn.P_s, v.attn.b_s, v.attn.W_theta, v.attn.b_theta});
  detail::append_gru_vars(v.loc.layer1_fwd, out);
  detail::append_gru_vars(v.loc.layer1_bwd, out);
  detail::append_gru_vars(v.loc.layer2_fwd, out);
  detail::append_gru_vars(v.loc.layer2_bwd, out);
  out.insert(out.end(), {v.loc.w_start, v.loc.b_start, v.loc.w_end, v.loc.b_end});
  return out;
}

// Copies of every parameter tensor in the param_refs order.
inline std::vector<Tensor> param_tensors(const ModelParams& p) {
  std::vector<Tensor> out;
  std::vector<ParamRef> refs = param_refs(const_cast<ModelParams&>(p));
  out.reserve(refs.size());
  for (const ParamRef& r : refs) out.push_back(*r.tensor);
  return out;
}

namespace detail {

inline GruCellVars take_gru_vars(const std::vector<Var>& v, std::size_t& i) {
  GruCellVars c;
  c.W_z = v[i++];
  c.W_r = v[i++];
  c.W_h = v[i++];
  c.U_z = v[i++];
  c.U_r = v[i++];
  c.U_h = v[i++];
  c.b_z = v[i++];
  c.b_r = v[i++];
  c.b_h = v[i++];
  return c;
}

}  // namespace detail

// Rebuilds the ModelVars structure from a flat list of leaves in the
// param_refs order (the inverse of param_vars); used by the gradient-check
// harness, which perturbs parameters as plain tensors.
inline ModelVars model_vars_from(const std::vector<Var>& flat, double dropout_p = 0.5) {
  std::size_t i = 0;
  ModelVars m;
  m.sentenc.forward_cell = detail::take_gru_vars(flat, i);
  m.sentenc.backward_cell = detail::take_gru_vars(flat, i);
  m.attn.P_v = flat[i++];
  m.attn.b_v = flat[i++];
  m.attn.P_s = flat[i++];
  m.attn.b_s = flat[i++];
  m.attn.W_theta = flat[i++];
  m.attn.b_theta = flat[i++];
  m.loc.layer1_fwd = detail::take_gru_vars(flat, i);
  m.loc.layer1_bwd = detail::take_gru_vars(flat, i);
  m.loc.layer2_fwd = detail::take_gru_vars(flat, i);
  m.loc.layer2_bwd = detail::take_gru_vars(flat, i);
  m.loc.w_start = flat[i++];
  m.loc.b_start = flat[i++];
  m.loc.w_end = flat[i++];
  m.loc.b_end = flat[i++];
  m.loc.dropout_p = dropout_p;
  if (i != flat.size()) throw shape_error("model_vars_from: leaf count mismatch");
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass

enum class LossMode { kKl, kNll };

struct LossOptions {
  LossMode mode = LossMode::kKl;
  bool use_attention_loss = true;
  double sigma = 1.0;
  KlDirection kl_direction = KlDirection::kPredTarget;
};

struct SampleForward {
  Var attention;  // A, length n
  Var start, end;
  Var l_att;   // valid when span given
  Var l_main;  // valid when span given
  Var total;   // valid when span given
};

// Runs the model over one sample. When tau_s/tau_e are zero the losses are
// skipped (inference). Dropout draws come from rng in training mode only.
inline SampleForward forward_sample(Tape& tape, const ModelVars& vars, const Tensor& features,
                                    const std::vector<int>& token_ids,
                                    const EmbeddingTable& table, std::size_t tau_s,
                                    std::size_t tau_e, const LossOptions& opt, RngState& rng,
                                    bool training) {
  SampleForward out;
  Var h_bar = encode_sentence(tape, token_ids, table, vars.sentenc);
  Var G = tape.constant(features);
  Projected proj = project(tape, G, h_bar, vars.attn);
  Var theta = dynamic_filter(tape, proj.h_d, vars.attn);
  AttentionOutput att = guided_attention(tape, proj.G_d, theta);
  out.attention = att.A;
  SpanDistributionVars dists = localize(tape, att.G_bar, vars.loc, rng, training);
  out.start = dists.start;
  out.end = dists.end;
  if (tau_s == 0 || tau_e == 0) return out;

  out.l_att = attention_loss(tape, att.A, tau_s, tau_e);
  if (opt.mode == LossMode::kKl) {
    const std::size_t n = tape.value(att.A).numel();
    out.l_main = kl_loss(tape, dists, make_soft_labels(tau_s, tau_e, n, opt.sigma),
                         opt.kl_direction);
  } else {
    out.l_main = nll_loss(tape, dists, tau_s, tau_e);
  }
  out.total = total_loss(tape, out.l_main, out.l_att, opt.use_attention_loss);
  return out;
}

inline SpanDistributions distributions_of(const Tape& tape, const SampleForward& fwd) {
  return SpanDistributions{tape.value(fwd.start).values(), tape.value(fwd.end).values()};
}

}  // namespace tmlga
