#include "datamanip/manipulation.hpp"

#include <stdexcept>

namespace datamanip {

const char* gate_mode_name(GateMode mode) {
  switch (mode) {
    case GateMode::learned: return "learned";
    case GateMode::closed: return "closed";
    case GateMode::open: return "open";
  }
  return "?";
}

GateMode parse_gate_mode(std::string_view name) {
  if (name == "learned") return GateMode::learned;
  if (name == "closed") return GateMode::closed;
  if (name == "open") return GateMode::open;
  throw std::invalid_argument("unknown gate mode: " + std::string(name));
}

const char* gate_gradient_name(GateGradient g) {
  return g == GateGradient::straight_through ? "straight_through" : "soft";
}

GateGradient parse_gate_gradient(std::string_view name) {
  if (name == "straight_through") return GateGradient::straight_through;
  if (name == "soft") return GateGradient::soft;
  throw std::invalid_argument("unknown gate gradient: " + std::string(name));
}

const char* augmenter_choice_name(AugmenterChoice c) {
  switch (c) {
    case AugmenterChoice::coin: return "coin";
    case AugmenterChoice::learned: return "learned";
    case AugmenterChoice::word: return "word";
    case AugmenterChoice::sentence: return "sentence";
  }
  return "?";
}

AugmenterChoice parse_augmenter_choice(std::string_view name) {
  if (name == "coin") return AugmenterChoice::coin;
  if (name == "learned") return AugmenterChoice::learned;
  if (name == "word") return AugmenterChoice::word;
  if (name == "sentence") return AugmenterChoice::sentence;
  throw std::invalid_argument("unknown augmenter choice: " + std::string(name));
}

const char* augmenter_name(Augmenter a) {
  switch (a) {
    case Augmenter::none: return "none";
    case Augmenter::word: return "word";
    case Augmenter::sentence: return "sentence";
  }
  return "?";
}

void ManipulationConfig::validate() const {
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) throw std::invalid_argument("mask_rate must lie in [0, 1)");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must lie in [0, 1]");
  if (scorer_hidden < 1) throw std::invalid_argument("scorer_hidden must be >= 1");
  if (translate_max_len < 1) throw std::invalid_argument("translate_max_len must be >= 1");
  if (mlm_pretrain_steps < 0 || translator_pretrain_steps < 0 || pretrain_batch < 1) {
    throw std::invalid_argument("invalid pretraining settings");
  }
  if (!(mlm_pretrain_lr > 0.0) || !(translator_pretrain_lr > 0.0)) {
    throw std::invalid_argument("pretraining learning rates must be > 0");
  }
  translator.validate(Architecture::seq2seq);
}

SeqBatch AugmentedBatch::seq_batch(int vocab_size) const {
  return make_seq_batch(queries, responses, vocab_size);
}

FilterResult filter_instances(const ad::Var& gate_logits, double threshold,
                              GateGradient gradient, bool training, Rng& rng) {
  FilterResult out;
  out.gates = ad::sigmoid(gate_logits);
  const ad::Matrix& g = out.gates.value();
  for (Eigen::Index j = 0; j < g.rows(); ++j) {
    if (!training) {
      const bool take = g(j, 0) > threshold;
      out.augment.push_back(take);
      out.multipliers.push_back(ad::scalar(take ? 1.0 : 0.0));
      continue;
    }
    ad::Var gate = ad::slice_rows(out.gates, j, 1);
    if (gradient == GateGradient::soft) {
      out.augment.push_back(g(j, 0) > threshold);
      out.multipliers.push_back(gate);
      continue;
    }
    const bool take = rng.uniform() < g(j, 0);
    out.augment.push_back(take);
    out.multipliers.push_back(
        ad::straight_through(ad::Matrix::Constant(1, 1, take ? 1.0 : 0.0), gate));
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename Build>
ManipulationNet::Range ManipulationNet::add_part(Build&& build) {
  ParamSet part;
  build(part);
  Range r;
  r.count = part.size();
  r.offset = params_.append(part, "");
  return r;
}

ManipulationNet::ManipulationNet(int vocab_size, const ManipulationConfig& config,
                                 std::uint64_t seed)
    : vocab_size_(vocab_size), config_(config) {
  config_.validate();
  if (vocab_size <= kNumSpecials) throw std::invalid_argument("ManipulationNet: vocabulary too small");
  Rng rng(derive_seed(seed, "manipulation-init"));
  // Core tensors go first so their indices are valid on the whole set.
  encoder_ = InstanceEncoder::create(params_, "encoder", vocab_size, config_.encoder, rng);
  if (config_.separate_encoder) {
    gate_encoder_ = InstanceEncoder::create(params_, "gate_encoder", vocab_size, config_.encoder, rng);
  }
  // Output heads start at zero: every gate equals sigmoid(gate_bias) and
  // every weight is uniform until the meta-gradient says otherwise. Random
  // heads would turn drift of the shared encoder into arbitrary gate shifts.
  auto zero = [&](const nn::Linear& l) {
    params_.set_value(l.weight, ad::Matrix::Zero(params_[l.weight].rows(), params_[l.weight].cols()));
    if (l.has_bias) params_.set_value(l.bias, ad::Matrix::Zero(1, l.out));
  };
  gate_head_ = nn::Linear::create(params_, "gate", config_.encoder.dim, 1, rng);
  zero(gate_head_);
  params_.set_value(gate_head_.bias, ad::Matrix::Constant(1, 1, config_.gate_bias));
  if (config_.choice == AugmenterChoice::learned) {
    choice_head_ = nn::Linear::create(params_, "choice", config_.encoder.dim, 1, rng);
    zero(choice_head_);
  }
  scorer_ = Scorer::create(params_, "scorer", config_.encoder.dim, config_.scorer_hidden, rng);
  zero(scorer_.output);
  core_.count = params_.size();

  mlm_range_ = add_part([&](ParamSet& p) {
    mlm_ = MaskedLM::create(p, vocab_size, config_.mlm, rng);
  });
  std::shared_ptr<const DialogueModel> fwd_model, bwd_model;
  fwd_range_ = add_part([&](ParamSet& p) {
    auto built = build_model(Architecture::seq2seq, config_.translator, vocab_size,
                             derive_seed(seed, "translator-forward"));
    fwd_model = std::move(built.model);
    p = std::move(built.params);
  });
  bwd_range_ = add_part([&](ParamSet& p) {
    auto built = build_model(Architecture::seq2seq, config_.translator, vocab_size,
                             derive_seed(seed, "translator-backward"));
    bwd_model = std::move(built.model);
    p = std::move(built.params);
  });
  // Prefix translator tensor names so they stay unique inside phi.
  for (std::size_t i = 0; i < fwd_range_.count; ++i) {
    params_.rename(fwd_range_.offset + i, "bt_forward." + params_.name(fwd_range_.offset + i));
  }
  for (std::size_t i = 0; i < bwd_range_.count; ++i) {
    params_.rename(bwd_range_.offset + i, "bt_backward." + params_.name(bwd_range_.offset + i));
  }
  forward_ = std::make_shared<Seq2SeqTranslator>(fwd_model, config_.translate_max_len);
  backward_ = std::make_shared<Seq2SeqTranslator>(bwd_model, config_.translate_max_len);
  pivot_ = pivot_mapping(vocab_size, seed);
}

ParamSet ManipulationNet::mlm_params(const ParamSet& phi) const {
  return phi.slice(mlm_range_.offset, mlm_range_.count);
}
ParamSet ManipulationNet::forward_translator_params(const ParamSet& phi) const {
  return phi.slice(fwd_range_.offset, fwd_range_.count);
}
ParamSet ManipulationNet::backward_translator_params(const ParamSet& phi) const {
  return phi.slice(bwd_range_.offset, bwd_range_.count);
}

void ManipulationNet::pretrain(std::span<const DialoguePair> train, std::uint64_t seed) {
  const auto& c = config_;
  auto run = [&](Range r, auto&& fn) {
    ParamSet part = params_.slice(r.offset, r.count);
    fn(part);
    for (std::size_t i = 0; i < r.count; ++i) params_.set_value(r.offset + i, part[i].value());
  };
  run(mlm_range_, [&](ParamSet& p) {
    pretrain_mlm(mlm_, p, train, c.mlm_pretrain_steps, c.pretrain_batch, c.mlm_pretrain_lr,
                 c.mask_rate > 0.0 ? c.mask_rate : 0.15, seed);
  });
  const auto& fwd = static_cast<const Seq2SeqTranslator&>(*forward_);
  const auto& bwd = static_cast<const Seq2SeqTranslator&>(*backward_);
  run(fwd_range_, [&](ParamSet& p) {
    pretrain_translator(fwd.model(), p, train, pivot_, false, c.translator_pretrain_steps,
                        c.pretrain_batch, c.translator_pretrain_lr, seed);
  });
  run(bwd_range_, [&](ParamSet& p) {
    pretrain_translator(bwd.model(), p, train, pivot_, true, c.translator_pretrain_steps,
                        c.pretrain_batch, c.translator_pretrain_lr, seed);
  });
}

ad::Var ManipulationNet::features(const ParamSet& phi, std::span<const RelaxedSentence> queries,
                                  std::span<const RelaxedSentence> responses) const {
  return encoder_.encode(phi, queries, responses);
}

ad::Var ManipulationNet::gate_logits(const ParamSet& phi, std::span<const RelaxedSentence> queries,
                                     std::span<const RelaxedSentence> responses,
                                     const ad::Var& shared_features) const {
  ad::Var f = config_.separate_encoder ? gate_encoder_.encode(phi, queries, responses)
                                       : shared_features;
  return gate_head_.apply(phi, f);
}

AugmentedBatch ManipulationNet::augment_batch(const ParamSet& phi, const Batch& batch,
                                              double tau, bool training, Rng& rng,
                                              const Vocabulary* vocab) const {
  if (batch.size() == 0) throw std::invalid_argument("augment_batch: empty batch");
  AugmentedBatch out;
  const auto n = batch.size();
  out.originals = n;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& p = batch.pairs[j];
    out.pairs.push_back(p);
    out.queries.push_back(RelaxedSentence::from_ids(p.query, vocab_size_));
    out.responses.push_back(RelaxedSentence::from_ids(p.response, vocab_size_));
    out.origins.push_back(Origin::original);
    out.parent_rows.push_back(static_cast<int>(j));
    out.included.push_back(true);
    FilterDecision d;
    d.id = p.id;
    out.decisions.push_back(d);
  }

  const bool need_features = !config_.force_uniform_weights ||
                             (config_.gate_mode != GateMode::closed && !config_.separate_encoder) ||
                             config_.choice == AugmenterChoice::learned;
  ad::Var orig_features;
  if (need_features) orig_features = features(phi, out.queries, out.responses);

  // Candidate rows: every original while training (unselected ones carry a
  // zero multiplier so the gate still sees what including them would do),
  // only the selected ones otherwise.
  std::vector<ad::Var> multipliers(n);
  std::vector<bool> candidate(n, false);
  std::vector<std::size_t> word_rows, sent_rows;
  if (config_.gate_mode != GateMode::closed) {
    ad::Var logits = gate_logits(phi, out.queries, out.responses, orig_features);
    FilterResult f;
    if (config_.gate_mode == GateMode::open) {
      f.gates = ad::sigmoid(logits);
      f.augment.assign(n, true);
      f.multipliers.assign(n, ad::scalar(1.0));
    } else {
      f = filter_instances(logits, config_.threshold, config_.gate_gradient, training, rng);
    }
    ad::Var choice_p;
    if (config_.choice == AugmenterChoice::learned) {
      choice_p = ad::sigmoid(choice_head_.apply(phi, orig_features));
    }
    for (std::size_t j = 0; j < n; ++j) {
      auto& d = out.decisions[j];
      d.gate = f.gates.value()(static_cast<Eigen::Index>(j), 0);
      d.augment = f.augment[j];
      candidate[j] = d.augment || (training && config_.gate_mode == GateMode::learned);
      if (!candidate[j]) continue;
      ad::Var mult = f.multipliers[j];
      bool word = false;
      switch (config_.choice) {
        case AugmenterChoice::coin: word = rng.bernoulli(0.5); break;
        case AugmenterChoice::word: word = true; break;
        case AugmenterChoice::sentence: word = false; break;
        case AugmenterChoice::learned: {
          ad::Var p = ad::slice_rows(choice_p, static_cast<Eigen::Index>(j), 1);
          word = rng.uniform() < p.item();
          ad::Var chosen = word ? p : ad::add_scalar(ad::neg(p), 1.0);
          mult = ad::mul(mult, ad::straight_through(ad::Matrix::Ones(1, 1), chosen));
          break;
        }
      }
      if (d.augment) d.augmenter = word ? Augmenter::word : Augmenter::sentence;
      (word ? word_rows : sent_rows).push_back(j);
      multipliers[j] = mult;
    }
  }

  // Augmenters run in a fixed order so the random stream is reproducible:
  // word-level instances first, then one batched back-translation.
  std::vector<AugmentResult> results(n);
  if (!word_rows.empty()) {
    const ParamSet mp = mlm_params(phi);
    for (auto j : word_rows) {
      results[j] = augment_word_level(batch.pairs[j], mlm_, mp, config_.mask_rate, tau, rng,
                                      config_.augment_query);
    }
  }
  if (!sent_rows.empty()) {
    std::vector<DialoguePair> sources;
    for (auto j : sent_rows) sources.push_back(batch.pairs[j]);
    const ParamSet fp = forward_translator_params(phi);
    const ParamSet bp = backward_translator_params(phi);
    auto translated = augment_sentence_level(sources, vocab_size_, *forward_, fp, *backward_, bp,
                                             tau, rng, config_.augment_query);
    for (std::size_t k = 0; k < sent_rows.size(); ++k) {
      results[sent_rows[k]] = std::move(translated[k]);
    }
  }

  std::vector<ad::Var> inclusion{ad::constant(ad::Matrix::Ones(static_cast<Eigen::Index>(n), 1))};
  for (std::size_t j = 0; j < n; ++j) {
    if (!candidate[j]) continue;
    auto& r = results[j];
    auto& d = out.decisions[j];
    if (d.augment) {
      d.flagged = r.flagged;
      if (vocab != nullptr) {
        d.query_text = detokenize(vocab->decode(r.pair.query));
        d.response_text = detokenize(vocab->decode(r.pair.response));
      }
    }
    out.pairs.push_back(r.pair);
    out.queries.push_back(std::move(r.query));
    out.responses.push_back(std::move(r.response));
    out.origins.push_back(r.pair.origin);
    out.parent_rows.push_back(static_cast<int>(j));
    out.included.push_back(multipliers[j].value()(0, 0) != 0.0);
    inclusion.push_back(multipliers[j]);
  }
  out.inclusion = ad::concat_rows(inclusion);

  if (!config_.force_uniform_weights) {
    if (out.size() == n) {
      out.features = orig_features;
    } else if (config_.weights.parent_shared) {
      out.features = ad::gather_rows(orig_features, std::vector<Eigen::Index>(
                                                        out.parent_rows.begin(), out.parent_rows.end()));
    } else {
      std::span<const RelaxedSentence> qs(out.queries), rs(out.responses);
      std::vector<ad::Var> parts{orig_features, features(phi, qs.subspan(n), rs.subspan(n))};
      out.features = ad::concat_rows(parts);
    }
  }
  return out;
}

WeightVector ManipulationNet::weigh(const ParamSet& phi, const AugmentedBatch& batch) const {
  const bool plain = batch.size() == batch.originals;
  if (config_.force_uniform_weights) {
    if (plain) {
      WeightVector w;
      w.norm = config_.weights.norm;
      w.weights = uniform_weights(static_cast<int>(batch.size()), w.norm);
      w.scores = ad::Matrix::Zero(static_cast<Eigen::Index>(batch.size()), 1);
      return w;
    }
    return weights_from_scores(ad::zeros(static_cast<Eigen::Index>(batch.size()), 1),
                               config_.weights, batch.origins, batch.parent_rows, batch.inclusion);
  }
  return score_and_weight(batch.features, scorer_, phi, config_.weights, batch.origins,
                          batch.parent_rows, plain ? ad::Var{} : batch.inclusion);
}

}  // namespace datamanip
