#include "datamanip/dialogue_model.hpp"

#include <cmath>
#include <stdexcept>

#include "datamanip/layers.hpp"

namespace datamanip {

const char* architecture_name(Architecture arch) {
  return arch == Architecture::seq2seq ? "seq2seq" : "transformer";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "seq2seq") return Architecture::seq2seq;
  if (name == "transformer") return Architecture::transformer;
  throw std::invalid_argument("unknown architecture: " + std::string(name));
}

ModelDims ModelDims::desk(Architecture arch) {
  ModelDims d;
  if (arch == Architecture::transformer) {
    d.embedding = 128;
    d.hidden = 128;
    d.heads = 4;
    d.layers = 2;
    d.ff_hidden = 256;
  }
  return d;
}

ModelDims ModelDims::paper(Architecture arch) {
  ModelDims d;
  if (arch == Architecture::seq2seq) {
    d.embedding = 256;
    d.hidden = 256;
    d.layers = 2;
  } else {
    d.embedding = 512;
    d.hidden = 512;
    d.heads = 8;
    d.layers = 6;
    d.ff_hidden = 2048;
  }
  return d;
}

void ModelDims::validate(Architecture arch) const {
  if (hidden <= 0) throw std::invalid_argument("hidden size must be > 0");
  if (layers <= 0) throw std::invalid_argument("layer count must be > 0");
  if (max_len <= 0) throw std::invalid_argument("max_len must be > 0");
  if (arch == Architecture::seq2seq) {
    if (embedding <= 0) throw std::invalid_argument("embedding size must be > 0");
    if (hidden % 2 != 0) {
      throw std::invalid_argument("seq2seq hidden size must be even (bidirectional encoder)");
    }
  } else {
    if (heads <= 0 || hidden % heads != 0) {
      throw std::invalid_argument("transformer hidden size must be divisible by heads");
    }
    if (ff_hidden <= 0) throw std::invalid_argument("ff_hidden must be > 0");
  }
}

void DecodeConfig::validate() const {
  if (max_len < 1) throw std::invalid_argument("decode max_len must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("decode temperature must be > 0");
}

namespace {

using ad::Var;

std::vector<Eigen::Index> repeat_index(int batch, int width) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(batch) * static_cast<std::size_t>(width));
  for (int t = 0; t < width; ++t) {
    for (int b = 0; b < batch; ++b) idx.push_back(b);
  }
  return idx;
}

ad::Matrix mask_logits(const ad::Matrix& mask) {
  return ((1.0 - mask.array()) * nn::kMaskedLogit).matrix();
}

// Sums masked per-position token log-likelihoods (time-major column) into a
// batch x 1 NLL column.
Var collect_nll(const Var& token_logp, const SeqSide& target, bool normalize) {
  const int batch = target.batch;
  ad::Matrix flat_mask(static_cast<Eigen::Index>(target.width) * batch, 1);
  for (int t = 0; t < target.width; ++t) {
    for (int b = 0; b < batch; ++b) {
      flat_mask(static_cast<Eigen::Index>(t) * batch + b, 0) = target.mask(b, t);
    }
  }
  Var masked = ad::mul(token_logp, ad::constant(std::move(flat_mask)));
  Var nll = ad::neg(ad::scatter_add_rows(masked, repeat_index(batch, target.width), batch));
  if (!normalize) return nll;
  ad::Matrix inv(batch, 1);
  for (int b = 0; b < batch; ++b) inv(b, 0) = 1.0 / target.lengths[static_cast<std::size_t>(b)];
  return ad::mul(nll, ad::constant(std::move(inv)));
}

// ---------------------------------------------------------------------------

class Seq2SeqModel final : public DialogueModel {
 public:
  Seq2SeqModel(const ModelDims& dims, int vocab, ParamSet& params, Rng& rng)
      : DialogueModel(dims, vocab) {
    const int h = dims.hidden;
    embed_ = params.add("embed", init_normal(vocab, dims.embedding,
                                             1.0 / std::sqrt(dims.embedding), rng));
    for (int l = 0; l < dims.layers; ++l) {
      const int in = l == 0 ? dims.embedding : h;
      const auto tag = "encoder." + std::to_string(l);
      enc_fwd_.push_back(nn::LstmLayer::create(params, tag + ".fwd", in, h / 2, rng));
      enc_bwd_.push_back(nn::LstmLayer::create(params, tag + ".bwd", in, h / 2, rng));
    }
    for (int l = 0; l < dims.layers; ++l) {
      bridge_.push_back(nn::Linear::create(params, "bridge." + std::to_string(l), h, h, rng));
    }
    for (int l = 0; l < dims.layers; ++l) {
      const int in = l == 0 ? dims.embedding : h;
      dec_.push_back(nn::LstmLayer::create(params, "decoder." + std::to_string(l), in, h, rng));
    }
    attn_ = params.add("attention.weight",
                       init_uniform(h, h, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    combine_ = nn::Linear::create(params, "combine", 2 * h, h, rng);
    out_ = nn::Linear::create(params, "output", h, vocab, rng);
  }

  Architecture architecture() const override { return Architecture::seq2seq; }

  struct Encoded {
    Var stack;  // (width * batch) x hidden, time-major
    Var keys;
    ad::Matrix attn_mask;  // batch x width, additive
    std::vector<nn::LstmState> init;
    std::vector<Eigen::Index> rep;
    int batch = 0;
    int width = 0;
  };

  Encoded encode(const ParamSet& theta, const SeqSide& source) const {
    Encoded e;
    e.batch = source.batch;
    e.width = source.width;
    const int B = source.batch;
    const int W = source.width;
    Var emb = ad::matmul(source.tokens, theta[embed_]);
    std::vector<Var> inputs;
    inputs.reserve(static_cast<std::size_t>(W));
    for (int t = 0; t < W; ++t) inputs.push_back(ad::slice_rows(emb, t * B, B));

    Var last_fwd, first_bwd;
    for (std::size_t l = 0; l < enc_fwd_.size(); ++l) {
      std::vector<Var> fwd(static_cast<std::size_t>(W)), bwd(static_cast<std::size_t>(W));
      auto s = enc_fwd_[l].initial(B);
      for (int t = 0; t < W; ++t) {
        s = enc_fwd_[l].step(theta, inputs[static_cast<std::size_t>(t)], s, source.mask.col(t));
        fwd[static_cast<std::size_t>(t)] = s.h;
      }
      last_fwd = s.h;
      s = enc_bwd_[l].initial(B);
      for (int t = W - 1; t >= 0; --t) {
        s = enc_bwd_[l].step(theta, inputs[static_cast<std::size_t>(t)], s, source.mask.col(t));
        bwd[static_cast<std::size_t>(t)] = s.h;
      }
      first_bwd = s.h;
      for (int t = 0; t < W; ++t) {
        std::vector<Var> both{fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]};
        inputs[static_cast<std::size_t>(t)] = ad::concat_cols(both);
      }
    }
    e.stack = ad::concat_rows(inputs);
    e.keys = ad::matmul(e.stack, theta[attn_]);
    e.attn_mask = mask_logits(source.mask);
    e.rep = repeat_index(B, W);
    std::vector<Var> ends{last_fwd, first_bwd};
    Var summary = ad::concat_cols(ends);
    for (const auto& bridge : bridge_) {
      e.init.push_back({ad::tanh(bridge.apply(theta, summary)), ad::zeros(B, dims_.hidden)});
    }
    return e;
  }

  class Session final : public DecoderSession {
   public:
    Session(const Seq2SeqModel& model, const ParamSet& theta, Encoded enc)
        : model_(model), theta_(theta), enc_(std::move(enc)), state_(enc_.init) {}

    // Attention-combined decoder output, batch x hidden.
    Var hidden_step(const Var& rows) {
      Var x = ad::matmul(rows, theta_[model_.embed_]);
      for (std::size_t l = 0; l < model_.dec_.size(); ++l) {
        state_[l] = model_.dec_[l].step(theta_, x, state_[l], ad::Matrix());
        x = state_[l].h;
      }
      const int B = enc_.batch;
      const int W = enc_.width;
      Var s_rep = ad::gather_rows(x, enc_.rep);
      Var scores = ad::reshape(ad::row_sum(ad::mul(s_rep, enc_.keys)), B, W);
      scores = ad::add(scores, ad::constant(enc_.attn_mask));
      Var attn = ad::reshape(ad::softmax_rows(scores), static_cast<Eigen::Index>(W) * B, 1);
      Var ctx = ad::scatter_add_rows(ad::mul_col(enc_.stack, attn), enc_.rep, B);
      std::vector<Var> both{x, ctx};
      return ad::tanh(model_.combine_.apply(theta_, ad::concat_cols(both)));
    }

    Var step(const Var& rows) override {
      return model_.out_.apply(theta_, hidden_step(rows));
    }

   private:
    const Seq2SeqModel& model_;
    const ParamSet& theta_;
    Encoded enc_;
    std::vector<nn::LstmState> state_;
  };

  std::unique_ptr<DecoderSession> start(const ParamSet& theta,
                                        const SeqSide& source) const override {
    return std::make_unique<Session>(*this, theta, encode(theta, source));
  }

  Var per_sample_nll(const ParamSet& theta, const SeqBatch& batch) const override {
    Session session(*this, theta, encode(theta, batch.source));
    const int T = batch.decoder_input.width;
    std::vector<Var> outputs;
    outputs.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) outputs.push_back(session.hidden_step(batch.decoder_input.step(t)));
    Var logp = ad::log_softmax_rows(out_.apply(theta, ad::concat_rows(outputs)));
    Var token_logp = ad::row_sum(ad::mul(logp, batch.target.tokens));
    return collect_nll(token_logp, batch.target, dims_.length_normalize);
  }

 private:
  std::size_t embed_ = 0;
  std::vector<nn::LstmLayer> enc_fwd_, enc_bwd_;
  std::vector<nn::Linear> bridge_;
  std::vector<nn::LstmLayer> dec_;
  std::size_t attn_ = 0;
  nn::Linear combine_, out_;
};

// ---------------------------------------------------------------------------

class TransformerModel final : public DialogueModel {
 public:
  TransformerModel(const ModelDims& dims, int vocab, ParamSet& params, Rng& rng)
      : DialogueModel(dims, vocab),
        positions_(nn::sinusoidal_positions(dims.max_len + 2, dims.hidden)) {
    const int d = dims.hidden;
    embed_ = params.add("embed", init_normal(vocab, d, 1.0, rng));
    for (int l = 0; l < dims.layers; ++l) {
      enc_.push_back(nn::EncoderBlock::create(params, "encoder." + std::to_string(l), d,
                                              dims.heads, dims.ff_hidden, rng));
    }
    enc_norm_ = nn::LayerNorm::create(params, "encoder.norm", d);
    for (int l = 0; l < dims.layers; ++l) {
      dec_.push_back(nn::DecoderBlock::create(params, "decoder." + std::to_string(l), d,
                                              dims.heads, dims.ff_hidden, rng));
    }
    dec_norm_ = nn::LayerNorm::create(params, "decoder.norm", d);
    out_ = nn::Linear::create(params, "output", d, vocab, rng);
  }

  Architecture architecture() const override { return Architecture::transformer; }

  Var embed(const ParamSet& theta, const Var& rows) const {
    const auto len = rows.rows();
    if (len > positions_.rows()) throw std::invalid_argument("sequence longer than max_len");
    return ad::add(ad::matmul(rows, theta[embed_]),
                   ad::constant(positions_.topRows(len)));
  }

  Var encode_one(const ParamSet& theta, const Var& rows) const {
    Var x = embed(theta, rows);
    for (const auto& block : enc_) x = block.apply(theta, x, ad::Matrix());
    return enc_norm_.apply(theta, x);
  }

  Var decode_one(const ParamSet& theta, const Var& memory, const Var& rows) const {
    Var x = embed(theta, rows);
    const ad::Matrix causal = nn::causal_mask(static_cast<int>(rows.rows()));
    for (const auto& block : dec_) x = block.apply(theta, x, memory, causal, ad::Matrix());
    return out_.apply(theta, dec_norm_.apply(theta, x));
  }

  class Session final : public DecoderSession {
   public:
    Session(const TransformerModel& model, const ParamSet& theta, const SeqSide& source)
        : model_(model), theta_(theta) {
      for (int b = 0; b < source.batch; ++b) {
        memory_.push_back(model.encode_one(theta, source.sequence(b)));
      }
      prefix_.resize(memory_.size());
    }

    Var step(const Var& rows) override {
      std::vector<Var> logits;
      for (std::size_t b = 0; b < memory_.size(); ++b) {
        prefix_[b].push_back(ad::slice_rows(rows, static_cast<Eigen::Index>(b), 1));
        Var all = model_.decode_one(theta_, memory_[b], ad::concat_rows(prefix_[b]));
        logits.push_back(ad::slice_rows(all, all.rows() - 1, 1));
      }
      return ad::concat_rows(logits);
    }

   private:
    const TransformerModel& model_;
    const ParamSet& theta_;
    std::vector<Var> memory_;
    std::vector<std::vector<Var>> prefix_;
  };

  std::unique_ptr<DecoderSession> start(const ParamSet& theta,
                                        const SeqSide& source) const override {
    return std::make_unique<Session>(*this, theta, source);
  }

  Var per_sample_nll(const ParamSet& theta, const SeqBatch& batch) const override {
    std::vector<Var> rows;
    for (int b = 0; b < batch.size(); ++b) {
      Var memory = encode_one(theta, batch.source.sequence(b));
      Var logp = ad::log_softmax_rows(
          decode_one(theta, memory, batch.decoder_input.sequence(b)));
      Var nll = ad::neg(ad::sum(ad::mul(logp, batch.target.sequence(b))));
      if (dims_.length_normalize) {
        nll = ad::scale(nll, 1.0 / batch.target.lengths[static_cast<std::size_t>(b)]);
      }
      rows.push_back(nll);
    }
    return ad::concat_rows(rows);
  }

 private:
  ad::Matrix positions_;
  std::size_t embed_ = 0;
  std::vector<nn::EncoderBlock> enc_;
  nn::LayerNorm enc_norm_;
  std::vector<nn::DecoderBlock> dec_;
  nn::LayerNorm dec_norm_;
  nn::Linear out_;
};

}  // namespace

TokenIds DialogueModel::generate(const ParamSet& theta, const TokenIds& query,
                                 const DecodeConfig& cfg, Rng* rng) const {
  cfg.validate();
  if (query.empty()) throw std::invalid_argument("generate: empty query");
  if (cfg.strategy == DecodeStrategy::sample && rng == nullptr) {
    throw std::invalid_argument("generate: sampling needs an Rng");
  }
  ad::NoGradGuard no_grad;
  std::vector<TokenIds> src{query};
  auto session = start(theta, make_side(src, vocab_size_));
  TokenIds out;
  int prev = kBos;
  for (int t = 0; t < cfg.max_len; ++t) {
    std::vector<int> prev_ids{prev};
    const ad::Matrix logits =
        session->step(ad::constant(one_hot_rows(prev_ids, vocab_size_))).value();
    int next = 0;
    if (cfg.strategy == DecodeStrategy::greedy) {
      logits.row(0).maxCoeff(&next);
    } else {
      Eigen::RowVectorXd p = (logits.row(0).array() / cfg.temperature).matrix();
      p = (p.array() - p.maxCoeff()).exp().matrix();
      p /= p.sum();
      const double u = rng->uniform();
      double acc = 0.0;
      next = static_cast<int>(p.size()) - 1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    if (next == kEos) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

BuiltModel build_model(Architecture arch, const ModelDims& dims, int vocab_size,
                       std::uint64_t seed) {
  dims.validate(arch);
  if (vocab_size <= kNumSpecials) {
    throw std::invalid_argument("vocabulary must contain non-special tokens");
  }
  BuiltModel built;
  Rng rng(derive_seed(seed, "init"));
  if (arch == Architecture::seq2seq) {
    built.model = std::make_unique<Seq2SeqModel>(dims, vocab_size, built.params, rng);
  } else {
    built.model = std::make_unique<TransformerModel>(dims, vocab_size, built.params, rng);
  }
  return built;
}

ad::Var weighted_loss(const ad::Var& nll, const ad::Var& weights) {
  if (nll.rows() != weights.rows() || nll.cols() != weights.cols()) {
    throw std::invalid_argument("weighted_loss: nll/weight shape mismatch");
  }
  if ((weights.value().array() < 0.0).any()) {
    throw std::invalid_argument("weighted_loss: negative weight");
  }
  return ad::sum(ad::mul(nll, weights));
}

ad::Var mean_nll(const DialogueModel& model, const ParamSet& theta,
                 const SeqBatch& batch) {
  return ad::scale(ad::sum(model.per_sample_nll(theta, batch)),
                   1.0 / static_cast<double>(batch.size()));
}

}  // namespace datamanip
