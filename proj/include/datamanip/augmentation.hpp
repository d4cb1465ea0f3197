#pragma once

// Differentiable data augmentation: gumbel-softmax relaxation, the masked
// language model used for word substitution, and the translator pair used
// for back-translation. Augmented sentences are RelaxedSentence rows whose
// forward values are exact one-hots and whose gradients reach the augmenter
// parameters.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "datamanip/autodiff.hpp"
#include "datamanip/corpus.hpp"
#include "datamanip/dialogue_model.hpp"
#include "datamanip/layers.hpp"
#include "datamanip/params.hpp"
#include "datamanip/rng.hpp"
#include "datamanip/sequence.hpp"

namespace datamanip {

// Standard Gumbel draws, filled in column-major order.
ad::Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Row-wise softmax((logits + g) / tau). With `hard` the forward value is the
// one-hot argmax of each row and the gradient follows the soft sample.
ad::Var gumbel_softmax(const ad::Var& logits, double tau, bool hard, Rng& rng);
ad::Var gumbel_softmax(const ad::Var& logits, double tau, bool hard,
                       const ad::Matrix& noise);

// Index of the largest entry of each row; ties go to the lowest index.
TokenIds row_argmax(const ad::Matrix& m);

// ---------------------------------------------------------------------------
// Word level.

struct MlmDims {
  int dim = 32;
  int heads = 2;
  int layers = 2;
  int ff_hidden = 64;
  // Longest "query <sep> response" input.
  int max_len = 2 * kDefaultMaxSequenceLength + 1;
};

// Transformer encoder over [query; EOS; response] with an extra MASK input
// id (= vocab_size). Predicts content tokens only.
class MaskedLM {
 public:
  static MaskedLM create(ParamSet& params, int vocab_size, const MlmDims& dims,
                         Rng& rng);

  int vocab_size() const { return vocab_size_; }
  int mask_id() const { return vocab_size_; }

  // len x vocab logits, specials pushed to -1e9.
  ad::Var logits(const ParamSet& params, std::span<const int> ids) const;

 private:
  int vocab_size_ = 0;
  std::size_t embed_ = 0;
  ad::Matrix positions_;
  std::vector<nn::EncoderBlock> blocks_;
  nn::LayerNorm norm_;
  nn::Linear out_;
};

// Standard masked-token objective on the pairs of a split. Returns the mean
// loss of the last step.
double pretrain_mlm(const MaskedLM& mlm, ParamSet& params,
                    std::span<const DialoguePair> pairs, int steps,
                    int batch_size, double lr, double mask_rate,
                    std::uint64_t seed);

// Id given to the augmented variant of pair `parent`; negative, so it never
// collides with corpus ids.
inline std::int64_t augmented_id(std::int64_t parent) { return -(parent + 1); }

struct AugmentResult {
  DialoguePair pair;  // hard ids, origin set, parent_id = source id
  RelaxedSentence query;
  RelaxedSentence response;
  // Word level: a sentence had no maskable token. Sentence level: decoding
  // hit max_len before EOS.
  bool flagged = false;
};

// ceil(rate * len) distinct non-special positions, fewer when the sentence
// has fewer maskable tokens.
std::vector<int> choose_mask_positions(std::span<const int> ids, double rate,
                                       Rng& rng);

// Masks ceil(mask_rate * len) non-special positions of each augmented side
// and refills them with straight-through gumbel-softmax draws from the MLM.
AugmentResult augment_word_level(const DialoguePair& pair, const MaskedLM& mlm,
                                 const ParamSet& params, double mask_rate,
                                 double tau, Rng& rng,
                                 bool augment_query = true);

// ---------------------------------------------------------------------------
// Sentence level.

struct RelaxedDecode {
  std::vector<RelaxedSentence> sentences;
  std::vector<bool> truncated;
};

class Translator {
 public:
  virtual ~Translator() = default;
  // Translates a batch of (soft) sentences.
  virtual RelaxedDecode translate(const ParamSet& params,
                                  std::span<const ad::Var> sources, double tau,
                                  Rng& rng) const = 0;
};

// Samples a response token by token with straight-through gumbel-softmax,
// feeding each sample back as the next input. PAD, UNK and BOS are never
// produced and EOS is blocked at the first step, so outputs are non-empty.
RelaxedDecode relaxed_decode(const DialogueModel& model, const ParamSet& params,
                             std::span<const ad::Var> sources, int max_len,
                             double tau, Rng& rng);

class Seq2SeqTranslator final : public Translator {
 public:
  Seq2SeqTranslator(std::shared_ptr<const DialogueModel> model, int max_len)
      : model_(std::move(model)), max_len_(max_len) {}

  RelaxedDecode translate(const ParamSet& params,
                          std::span<const ad::Var> sources, double tau,
                          Rng& rng) const override;
  const DialogueModel& model() const { return *model_; }

 private:
  std::shared_ptr<const DialogueModel> model_;
  int max_len_;
};

// Maps each token through a fixed permutation matrix (rows * P). Has no
// parameters; used as an exact stand-in in tests.
class PermutationTranslator final : public Translator {
 public:
  explicit PermutationTranslator(std::vector<int> mapping);

  RelaxedDecode translate(const ParamSet& params,
                          std::span<const ad::Var> sources, double tau,
                          Rng& rng) const override;

 private:
  std::vector<int> mapping_;
  ad::Matrix matrix_;
};

// A seeded permutation of the content ids; specials map to themselves.
std::vector<int> pivot_mapping(int vocab_size, std::uint64_t seed);
std::vector<int> invert_mapping(std::span<const int> mapping);

// Trains `model` to map every sentence s of `pairs` (queries and responses)
// to mapping(s). Returns the mean NLL of the last step.
double pretrain_translator(const DialogueModel& model, ParamSet& params,
                           std::span<const DialoguePair> pairs,
                           std::span<const int> mapping, bool inverse,
                           int steps, int batch_size, double lr,
                           std::uint64_t seed);

// Source -> pivot -> source for query and response of every pair, batched.
std::vector<AugmentResult> augment_sentence_level(
    std::span<const DialoguePair> pairs, int vocab_size, const Translator& forward,
    const ParamSet& forward_params, const Translator& backward,
    const ParamSet& backward_params, double tau, Rng& rng,
    bool augment_query = true);

}  // namespace datamanip
