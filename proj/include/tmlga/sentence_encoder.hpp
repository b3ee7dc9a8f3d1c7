// SPDX-License-Identifier: Apache-2.0
//
// Sentence encoder: frozen word embeddings -> bidirectional GRU -> mean
// pooling over the per-token hidden states. The pooled representation has
// width 2u (forward and backward halves concatenated before pooling).

#pragma once

#include <vector>

#include "tmlga/dataio.hpp"
#include "tmlga/gru.hpp"
#include "tmlga/tape.hpp"

namespace tmlga {

struct SentenceEncoderParams {
  GruCellParams forward_cell;
  GruCellParams backward_cell;

  std::size_t hidden_size() const { return forward_cell.hidden_size(); }
  std::size_t output_size() const { return 2 * hidden_size(); }
};

inline SentenceEncoderParams init_sentence_encoder(std::size_t hidden, std::size_t emb_dim,
                                                   RngState& rng) {
  SentenceEncoderParams p;
  p.forward_cell = init_gru_cell(hidden, emb_dim, rng);
  p.backward_cell = init_gru_cell(hidden, emb_dim, rng);
  return p;
}

struct SentenceEncoderVars {
  GruCellVars forward_cell;
  GruCellVars backward_cell;
};

inline SentenceEncoderVars bind_sentence_encoder(Tape& tape, const SentenceEncoderParams& p,
                                                 bool requires_grad = true) {
  return SentenceEncoderVars{bind_gru_cell(tape, p.forward_cell, requires_grad),
                             bind_gru_cell(tape, p.backward_cell, requires_grad)};
}

// Embeddings enter as a constant leaf, so gradients reach the GRU cells but
// never the table.
inline Var encode_sentence(Tape& tape, const std::vector<int>& token_ids,
                           const EmbeddingTable& table, const SentenceEncoderVars& p) {
  if (token_ids.empty()) throw shape_error("encode_sentence: empty token list");
  Var X = tape.constant(embed_tokens(token_ids, table));
  Var H = bigru_forward(tape, X, p.forward_cell, p.backward_cell);
  return mean_rows(H);
}

}  // namespace tmlga
