#pragma once

// Token sequences as rows of probability vectors. Hard tokens are exact
// one-hot rows; relaxed (gumbel-softmax) tokens are differentiable rows, so
// the dialogue model, the instance encoder and the augmenters all consume the
// same representation.

#include <span>
#include <vector>

#include "datamanip/autodiff.hpp"
#include "datamanip/corpus.hpp"
#include "datamanip/tokens.hpp"

namespace datamanip {

// One sentence as len x vocab rows. Every row is non-negative and sums to 1;
// `hard` holds the argmax of each row.
struct RelaxedSentence {
  ad::Var probs;
  TokenIds hard;
  double temperature = 1.0;

  static RelaxedSentence from_ids(std::span<const int> ids, int vocab_size);
  std::size_t size() const { return hard.size(); }
};

ad::Matrix one_hot_rows(std::span<const int> ids, int vocab_size);

// A padded batch of sequences in time-major order: row t * batch + b holds
// position t of sequence b. Padding rows are PAD one-hots with mask 0.
struct SeqSide {
  ad::Var tokens;
  ad::Matrix mask;  // batch x width
  std::vector<int> lengths;
  int batch = 0;
  int width = 0;

  // Rows of sequence b (length lengths[b]) in order.
  ad::Var sequence(int b) const;
  ad::Var step(int t) const { return ad::slice_rows(tokens, t * batch, batch); }
};

SeqSide make_side(std::span<const ad::Var> sequences, int vocab_size);
SeqSide make_side(std::span<const TokenIds> sequences, int vocab_size);

// Encoder input, decoder input (BOS + response) and target (response + EOS).
struct SeqBatch {
  SeqSide source;
  SeqSide decoder_input;
  SeqSide target;
  int vocab_size = 0;

  int size() const { return source.batch; }
};

SeqBatch make_seq_batch(std::span<const RelaxedSentence> queries,
                        std::span<const RelaxedSentence> responses,
                        int vocab_size);
SeqBatch make_seq_batch(const Batch& batch, int vocab_size);

}  // namespace datamanip
