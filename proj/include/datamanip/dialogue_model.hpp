#pragma once

// Encoder-decoder response generators. A model object holds only the
// architecture (dimensions and the indices of its tensors); the trainable
// tensors live in a ParamSet passed to every call, so the same model can be
// evaluated at theta or at a lookahead theta' that depends on other
// parameters.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "datamanip/autodiff.hpp"
#include "datamanip/params.hpp"
#include "datamanip/rng.hpp"
#include "datamanip/sequence.hpp"

namespace datamanip {

enum class Architecture { seq2seq, transformer };
const char* architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct ModelDims {
  int embedding = 64;
  int hidden = 64;
  // Recurrent layers (seq2seq) or blocks per stack (transformer).
  int layers = 2;
  int heads = 4;
  int ff_hidden = 256;
  int max_len = 32;
  // Divide each sample's NLL by its target length.
  bool length_normalize = false;

  static ModelDims desk(Architecture arch);
  // Sizes used for the published experiments.
  static ModelDims paper(Architecture arch);
  void validate(Architecture arch) const;
};

enum class DecodeStrategy { greedy, sample };

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  int max_len = 32;
  double temperature = 1.0;

  void validate() const;
};

// Incremental decoding state for one batch of sources.
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;
  // Feeds one row of (soft) input tokens per sequence, returns batch x vocab
  // logits for the next position.
  virtual ad::Var step(const ad::Var& input_rows) = 0;
};

class DialogueModel {
 public:
  virtual ~DialogueModel() = default;

  virtual Architecture architecture() const = 0;
  const ModelDims& dims() const { return dims_; }
  int vocab_size() const { return vocab_size_; }

  // Column of -log p(y_j | x_j), summed over target positions (EOS included).
  virtual ad::Var per_sample_nll(const ParamSet& theta,
                                 const SeqBatch& batch) const = 0;
  virtual std::unique_ptr<DecoderSession> start(const ParamSet& theta,
                                                const SeqSide& source) const = 0;

  // Terminates at EOS or cfg.max_len; the EOS itself is not returned.
  TokenIds generate(const ParamSet& theta, const TokenIds& query,
                    const DecodeConfig& cfg, Rng* rng = nullptr) const;

 protected:
  DialogueModel(ModelDims dims, int vocab_size)
      : dims_(dims), vocab_size_(vocab_size) {}

  ModelDims dims_;
  int vocab_size_;
};

struct BuiltModel {
  std::unique_ptr<DialogueModel> model;
  ParamSet params;
};

// Deterministic given `seed`. Throws on invalid dims or vocabulary size.
BuiltModel build_model(Architecture arch, const ModelDims& dims, int vocab_size,
                       std::uint64_t seed);

// sum_j w_j * nll_j. Weights must be non-negative.
ad::Var weighted_loss(const ad::Var& nll, const ad::Var& weights);

// Mean unweighted NLL, the validation objective.
ad::Var mean_nll(const DialogueModel& model, const ParamSet& theta,
                 const SeqBatch& batch);

}  // namespace datamanip
