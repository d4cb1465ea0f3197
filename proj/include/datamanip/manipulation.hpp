#pragma once

// The data manipulation network phi: instance filter, word- and
// sentence-level augmenters and the instance scorer, with all of their
// tensors in one ParamSet so a single meta-gradient reaches every part.

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "datamanip/augmentation.hpp"
#include "datamanip/weighting.hpp"

namespace datamanip {

enum class GateMode { learned, closed, open };
enum class GateGradient { straight_through, soft };
enum class AugmenterChoice { coin, learned, word, sentence };
enum class Augmenter { none, word, sentence };

const char* gate_mode_name(GateMode mode);
GateMode parse_gate_mode(std::string_view name);
const char* gate_gradient_name(GateGradient g);
GateGradient parse_gate_gradient(std::string_view name);
const char* augmenter_choice_name(AugmenterChoice c);
AugmenterChoice parse_augmenter_choice(std::string_view name);
const char* augmenter_name(Augmenter a);

struct ManipulationConfig {
  EncoderDims encoder;
  int scorer_hidden = 64;
  // Give the gate its own encoder instead of sharing the scorer's.
  bool separate_encoder = false;
  double gate_bias = 0.0;  // initial gate logit

  GateMode gate_mode = GateMode::learned;
  GateGradient gate_gradient = GateGradient::straight_through;
  AugmenterChoice choice = AugmenterChoice::coin;
  double threshold = 0.5;
  bool augment_query = true;

  double mask_rate = 0.15;
  MlmDims mlm;
  ModelDims translator{16, 16, 1, 1, 64, kDefaultMaxSequenceLength, false};
  int translate_max_len = 16;

  WeightOptions weights;
  bool force_uniform_weights = false;

  int mlm_pretrain_steps = 1000;
  int translator_pretrain_steps = 1000;
  int pretrain_batch = 16;
  double mlm_pretrain_lr = 0.003;
  double translator_pretrain_lr = 0.02;

  void validate() const;
};

struct FilterDecision {
  std::int64_t id = 0;
  double gate = 0.0;
  bool augment = false;
  Augmenter augmenter = Augmenter::none;
  bool flagged = false;
  std::string query_text;     // hard output, filled when a vocabulary is known
  std::string response_text;
};

// Originals first (in batch order), then augmented variants in the same
// order. Outside training there is one variant per selected original. While
// training with a learned gate every original gets a candidate variant; the
// unselected ones have inclusion 0 and therefore weight exactly 0.
struct AugmentedBatch {
  std::vector<DialoguePair> pairs;
  std::vector<RelaxedSentence> queries;
  std::vector<RelaxedSentence> responses;
  std::vector<Origin> origins;
  std::vector<int> parent_rows;
  std::vector<FilterDecision> decisions;  // one per original
  // N' x 1 inclusion multiplier: 1 for originals, the (straight-through)
  // gate decision for augmented samples. Folded into the weights.
  ad::Var inclusion;
  std::vector<bool> included;  // forward value of inclusion != 0
  // N' x d scorer features; undefined when weights are forced uniform.
  ad::Var features;
  std::size_t originals = 0;

  std::size_t size() const { return pairs.size(); }
  // Augmented samples that enter the loss.
  std::size_t augmented() const {
    std::size_t k = 0;
    for (std::size_t j = originals; j < included.size(); ++j) k += included[j] ? 1 : 0;
    return k;
  }
  SeqBatch seq_batch(int vocab_size) const;
};

struct FilterResult {
  ad::Var gates;  // N x 1, sigmoid outputs
  std::vector<bool> augment;
  std::vector<ad::Var> multipliers;  // 1 x 1 per instance
};

// Training, straight-through: augment ~ Bernoulli(gate), multiplier has the
// 0/1 decision as value and the gate's gradient. Training, soft: multiplier
// is the gate itself and augment = gate > threshold. Evaluation: augment =
// gate > threshold, constant 0/1 multiplier.
FilterResult filter_instances(const ad::Var& gate_logits, double threshold,
                              GateGradient gradient, bool training, Rng& rng);

class ManipulationNet {
 public:
  ManipulationNet(int vocab_size, const ManipulationConfig& config,
                  std::uint64_t seed);

  const ManipulationConfig& config() const { return config_; }
  int vocab_size() const { return vocab_size_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Fits the MLM and both translators on the training pairs.
  void pretrain(std::span<const DialoguePair> train, std::uint64_t seed);

  ParamSet mlm_params(const ParamSet& phi) const;
  ParamSet forward_translator_params(const ParamSet& phi) const;
  ParamSet backward_translator_params(const ParamSet& phi) const;
  const MaskedLM& mlm() const { return mlm_; }
  const Translator& forward_translator() const { return *forward_; }
  const Translator& backward_translator() const { return *backward_; }
  const std::vector<int>& pivot() const { return pivot_; }
  // phi tensors [0, core_size()) belong to the encoder, gate and scorer; the
  // rest to the MLM and the translators.
  std::size_t core_size() const { return core_.count; }

  // Scorer-encoder features for a list of instances.
  ad::Var features(const ParamSet& phi, std::span<const RelaxedSentence> queries,
                   std::span<const RelaxedSentence> responses) const;
  // N x 1 gate logits for the originals of a batch.
  ad::Var gate_logits(const ParamSet& phi, std::span<const RelaxedSentence> queries,
                      std::span<const RelaxedSentence> responses,
                      const ad::Var& shared_features) const;

  AugmentedBatch augment_batch(const ParamSet& phi, const Batch& batch, double tau,
                               bool training, Rng& rng,
                               const Vocabulary* vocab = nullptr) const;
  WeightVector weigh(const ParamSet& phi, const AugmentedBatch& batch) const;

 private:
  struct Range {
    std::size_t offset = 0;
    std::size_t count = 0;
  };
  template <typename Build>
  Range add_part(Build&& build);

  int vocab_size_;
  ManipulationConfig config_;
  ParamSet params_;
  InstanceEncoder encoder_;
  InstanceEncoder gate_encoder_;
  nn::Linear gate_head_;
  nn::Linear choice_head_;
  Scorer scorer_;
  MaskedLM mlm_;
  std::shared_ptr<Translator> forward_;
  std::shared_ptr<Translator> backward_;
  std::vector<int> pivot_;
  Range core_, mlm_range_, fwd_range_, bwd_range_;
};

}  // namespace datamanip
