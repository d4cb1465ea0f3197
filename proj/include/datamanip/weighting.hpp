#pragma once

// Instance weighting: a small transformer encodes each (query, response)
// pair, an MLP scores it, and a softmax over the batch turns scores into
// importance weights.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "datamanip/autodiff.hpp"
#include "datamanip/corpus.hpp"
#include "datamanip/layers.hpp"
#include "datamanip/params.hpp"
#include "datamanip/sequence.hpp"

namespace datamanip {

struct EncoderDims {
  int dim = 32;
  int heads = 2;
  int layers = 1;
  int ff_hidden = 64;
  int max_len = 2 * kDefaultMaxSequenceLength + 1;
};

// Encodes [query; EOS; response] and mean-pools the positions. Soft rows are
// embedded as expectations (probs * E), so a one-hot row encodes exactly like
// its hard id and gradients reach whatever produced the rows.
class InstanceEncoder {
 public:
  static InstanceEncoder create(ParamSet& params, const std::string& name,
                                int vocab_size, const EncoderDims& dims, Rng& rng);

  int dim() const { return dim_; }
  int vocab_size() const { return vocab_size_; }

  ad::Var encode_one(const ParamSet& params, const ad::Var& query,
                     const ad::Var& response) const;
  // One row per instance.
  ad::Var encode(const ParamSet& params, std::span<const RelaxedSentence> queries,
                 std::span<const RelaxedSentence> responses) const;

 private:
  int vocab_size_ = 0;
  int dim_ = 0;
  std::size_t embed_ = 0;
  ad::Matrix positions_;
  ad::Matrix separator_;
  std::vector<nn::EncoderBlock> blocks_;
  nn::LayerNorm norm_;
};

// Two-layer MLP with a tanh hidden layer and one output.
struct Scorer {
  nn::Linear hidden, output;

  static Scorer create(ParamSet& params, const std::string& name, int in,
                       int hidden_dim, Rng& rng);
  ad::Var apply(const ParamSet& params, const ad::Var& features) const;
};

enum class WeightNorm { sum_to_one, mean_one };
const char* weight_norm_name(WeightNorm norm);
WeightNorm parse_weight_norm(std::string_view name);

struct WeightOptions {
  WeightNorm norm = WeightNorm::sum_to_one;
  // Softmax separately over originals and over augmented samples; each group
  // keeps its share |group| / N' of the total mass.
  bool per_origin = false;
  // Augmented samples reuse their parent's score.
  bool parent_shared = false;
};

struct WeightVector {
  ad::Var weights;     // N' x 1
  ad::Matrix scores;   // N' x 1, before normalization
  WeightNorm norm = WeightNorm::sum_to_one;

  std::size_t size() const { return static_cast<std::size_t>(scores.rows()); }
};

// 1/N (sum_to_one) or 1 (mean_one) for every instance.
ad::Var uniform_weights(int n, WeightNorm norm);

// `origins` and `parent_rows` may be empty when neither flag is set;
// parent_rows[j] is the row of instance j's original (j itself for
// originals).
//
// With an N x 1 `inclusion` column m the softmax runs over the included
// instances only: w_j = m_j exp(s_j) / sum_k m_k exp(s_k), and mean_one
// rescales by sum_k m_k. For a 0/1 m the values equal the plain softmax over
// the included rows (excluded rows get exactly 0), while the gradient with
// respect to m_j prices the inclusion of instance j against the rest.
WeightVector weights_from_scores(const ad::Var& scores, const WeightOptions& options,
                                 std::span<const Origin> origins = {},
                                 std::span<const int> parent_rows = {},
                                 const ad::Var& inclusion = {});

WeightVector score_and_weight(const ad::Var& features, const Scorer& scorer,
                              const ParamSet& params, const WeightOptions& options,
                              std::span<const Origin> origins = {},
                              std::span<const int> parent_rows = {},
                              const ad::Var& inclusion = {});

}  // namespace datamanip
