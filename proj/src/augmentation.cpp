#include "datamanip/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace datamanip {

ad::Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  ad::Matrix g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.gumbel();
  return g;
}

TokenIds row_argmax(const ad::Matrix& m) {
  TokenIds ids(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = c;
    }
    ids[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return ids;
}

ad::Var gumbel_softmax(const ad::Var& logits, double tau, bool hard,
                       const ad::Matrix& noise) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  if (!logits.value().allFinite()) throw std::invalid_argument("gumbel_softmax: non-finite logits");
  if (noise.rows() != logits.rows() || noise.cols() != logits.cols()) {
    throw std::invalid_argument("gumbel_softmax: noise shape mismatch");
  }
  ad::Var soft = ad::softmax_rows(ad::scale(ad::add(logits, ad::constant(noise)), 1.0 / tau));
  if (!hard) return soft;
  const TokenIds ids = row_argmax(soft.value());
  return ad::straight_through(one_hot_rows(ids, static_cast<int>(logits.cols())), soft);
}

ad::Var gumbel_softmax(const ad::Var& logits, double tau, bool hard, Rng& rng) {
  return gumbel_softmax(logits, tau, hard, gumbel_noise(logits.rows(), logits.cols(), rng));
}

namespace {

// 1 x vocab additive mask over the given ids.
ad::Matrix blocked(int vocab_size, std::initializer_list<int> ids) {
  ad::Matrix m = ad::Matrix::Zero(1, vocab_size);
  for (int id : ids) m(0, id) = nn::kMaskedLogit;
  return m;
}

RelaxedSentence finish(ad::Var probs, double tau) {
  RelaxedSentence s;
  s.hard = row_argmax(probs.value());
  s.probs = std::move(probs);
  s.temperature = tau;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

MaskedLM MaskedLM::create(ParamSet& params, int vocab_size, const MlmDims& dims,
                          Rng& rng) {
  if (vocab_size <= kNumSpecials) throw std::invalid_argument("MaskedLM: vocabulary too small");
  if (dims.dim <= 0 || dims.heads <= 0 || dims.dim % dims.heads != 0 || dims.layers < 1) {
    throw std::invalid_argument("MaskedLM: invalid dimensions");
  }
  MaskedLM m;
  m.vocab_size_ = vocab_size;
  m.embed_ = params.add("mlm.embed", init_normal(vocab_size + 1, dims.dim, 1.0, rng));
  m.positions_ = nn::sinusoidal_positions(dims.max_len, dims.dim);
  for (int l = 0; l < dims.layers; ++l) {
    m.blocks_.push_back(nn::EncoderBlock::create(params, "mlm.block." + std::to_string(l),
                                                 dims.dim, dims.heads, dims.ff_hidden, rng));
  }
  m.norm_ = nn::LayerNorm::create(params, "mlm.norm", dims.dim);
  m.out_ = nn::Linear::create(params, "mlm.output", dims.dim, vocab_size, rng);
  return m;
}

ad::Var MaskedLM::logits(const ParamSet& params, std::span<const int> ids) const {
  if (static_cast<Eigen::Index>(ids.size()) > positions_.rows()) {
    throw std::invalid_argument("MaskedLM: input longer than max_len");
  }
  ad::Var x = ad::matmul(ad::constant(one_hot_rows(ids, vocab_size_ + 1)), params[embed_]);
  x = ad::add(x, ad::constant(positions_.topRows(static_cast<Eigen::Index>(ids.size()))));
  for (const auto& block : blocks_) x = block.apply(params, x, ad::Matrix());
  ad::Var out = out_.apply(params, norm_.apply(params, x));
  return ad::add_row(out, ad::constant(blocked(vocab_size_, {kPad, kUnk, kBos, kEos})));
}

std::vector<int> choose_mask_positions(std::span<const int> ids, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("mask rate must lie in [0, 1)");
  std::vector<int> maskable;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!is_special(ids[i])) maskable.push_back(static_cast<int>(i));
  }
  // The small offset keeps products like 0.15 * 20 from rounding up.
  const auto wanted = static_cast<std::size_t>(
      std::ceil(rate * static_cast<double>(ids.size()) - 1e-9));
  const std::size_t k = std::min(wanted, maskable.size());
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(maskable.size() - i));
    std::swap(maskable[i], maskable[j]);
  }
  maskable.resize(k);
  std::sort(maskable.begin(), maskable.end());
  return maskable;
}

namespace {

std::vector<int> joined_ids(const DialoguePair& pair) {
  std::vector<int> ids(pair.query.begin(), pair.query.end());
  ids.push_back(kEos);
  ids.insert(ids.end(), pair.response.begin(), pair.response.end());
  return ids;
}

}  // namespace

double pretrain_mlm(const MaskedLM& mlm, ParamSet& params,
                    std::span<const DialoguePair> pairs, int steps, int batch_size,
                    double lr, double mask_rate, std::uint64_t seed) {
  if (pairs.empty() || steps <= 0) return 0.0;
  Rng rng(derive_seed(seed, "mlm-pretrain"));
  Adam opt(lr);
  double last = 0.0;
  for (int step = 0; step < steps; ++step) {
    ParamSet p = params.as_leaves();
    std::vector<ad::Var> losses;
    int predicted = 0;
    for (int b = 0; b < batch_size; ++b) {
      const auto& pair = pairs[static_cast<std::size_t>(rng.below(pairs.size()))];
      std::vector<int> ids = joined_ids(pair);
      std::vector<int> positions = choose_mask_positions(
          std::span<const int>(ids.data(), pair.query.size()), mask_rate, rng);
      const auto offset = static_cast<int>(pair.query.size()) + 1;
      for (int pos : choose_mask_positions(pair.response, mask_rate, rng)) {
        positions.push_back(pos + offset);
      }
      if (positions.empty()) continue;
      std::vector<int> targets;
      std::vector<Eigen::Index> rows;
      for (int pos : positions) {
        targets.push_back(ids[static_cast<std::size_t>(pos)]);
        rows.push_back(pos);
        ids[static_cast<std::size_t>(pos)] = mlm.mask_id();
      }
      ad::Var logp = ad::gather_rows(ad::log_softmax_rows(mlm.logits(p, ids)), std::move(rows));
      losses.push_back(ad::sum(ad::mul(logp, ad::constant(one_hot_rows(targets, mlm.vocab_size())))));
      predicted += static_cast<int>(targets.size());
    }
    if (losses.empty()) continue;
    ad::Var total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    ad::Var loss = ad::scale(total, -1.0 / predicted);
    last = loss.item();
    opt.step(params, ad::grad(loss, p.tensors()));
  }
  return last;
}

AugmentResult augment_word_level(const DialoguePair& pair, const MaskedLM& mlm,
                                 const ParamSet& params, double mask_rate, double tau,
                                 Rng& rng, bool augment_query) {
  const int V = mlm.vocab_size();
  AugmentResult out;
  out.pair = pair;
  out.pair.origin = Origin::word_aug;
  out.pair.parent_id = pair.id;
  out.pair.id = augmented_id(pair.id);

  auto has_maskable = [](const TokenIds& s) {
    return std::any_of(s.begin(), s.end(), [](int t) { return !is_special(t); });
  };
  out.flagged = (augment_query && !has_maskable(pair.query)) || !has_maskable(pair.response);

  std::vector<int> qpos;
  if (augment_query) qpos = choose_mask_positions(pair.query, mask_rate, rng);
  const std::vector<int> rpos = choose_mask_positions(pair.response, mask_rate, rng);

  if (qpos.empty() && rpos.empty()) {
    out.query = RelaxedSentence::from_ids(pair.query, V);
    out.response = RelaxedSentence::from_ids(pair.response, V);
    out.query.temperature = out.response.temperature = tau;
    return out;
  }

  std::vector<int> ids = joined_ids(pair);
  const auto offset = static_cast<Eigen::Index>(pair.query.size()) + 1;
  std::vector<Eigen::Index> rows;
  for (int p : qpos) rows.push_back(p);
  for (int p : rpos) rows.push_back(offset + p);
  for (auto r : rows) ids[static_cast<std::size_t>(r)] = mlm.mask_id();
  ad::Var sampled = gumbel_softmax(ad::gather_rows(mlm.logits(params, ids), rows), tau, true, rng);

  // Unmasked rows are exact one-hot constants; masked rows are scattered in.
  auto rebuild = [&](const TokenIds& sentence, const std::vector<int>& pos, Eigen::Index first) {
    ad::Matrix base = one_hot_rows(sentence, V);
    if (pos.empty()) return finish(ad::constant(std::move(base)), tau);
    std::vector<Eigen::Index> place;
    for (int p : pos) {
      base.row(p).setZero();
      place.push_back(p);
    }
    ad::Var part = ad::slice_rows(sampled, first, static_cast<Eigen::Index>(pos.size()));
    ad::Var filled = ad::add(ad::constant(std::move(base)),
                             ad::scatter_add_rows(part, std::move(place),
                                                  static_cast<Eigen::Index>(sentence.size())));
    return finish(filled, tau);
  };
  out.query = rebuild(pair.query, qpos, 0);
  out.response = rebuild(pair.response, rpos, static_cast<Eigen::Index>(qpos.size()));
  out.pair.query = out.query.hard;
  out.pair.response = out.response.hard;
  return out;
}

// ---------------------------------------------------------------------------

RelaxedDecode relaxed_decode(const DialogueModel& model, const ParamSet& params,
                             std::span<const ad::Var> sources, int max_len, double tau,
                             Rng& rng) {
  if (max_len < 1) throw std::invalid_argument("relaxed_decode: max_len must be >= 1");
  RelaxedDecode out;
  if (sources.empty()) return out;
  const int V = model.vocab_size();
  const auto B = static_cast<int>(sources.size());
  auto session = model.start(params, make_side(sources, V));
  const ad::Var first_mask = ad::constant(blocked(V, {kPad, kUnk, kBos, kEos}));
  const ad::Var later_mask = ad::constant(blocked(V, {kPad, kUnk, kBos}));

  std::vector<int> bos(static_cast<std::size_t>(B), kBos);
  ad::Var prev = ad::constant(one_hot_rows(bos, V));
  std::vector<bool> alive(static_cast<std::size_t>(B), true);
  std::vector<std::vector<ad::Var>> rows(static_cast<std::size_t>(B));
  for (int t = 0; t < max_len; ++t) {
    ad::Var logits = ad::add_row(session->step(prev), t == 0 ? first_mask : later_mask);
    ad::Var y = gumbel_softmax(logits, tau, true, rng);
    const TokenIds ids = row_argmax(y.value());
    bool any = false;
    for (int b = 0; b < B; ++b) {
      const auto i = static_cast<std::size_t>(b);
      if (!alive[i]) continue;
      if (ids[i] == kEos) {
        alive[i] = false;
        continue;
      }
      rows[i].push_back(ad::slice_rows(y, b, 1));
      any = true;
    }
    if (!any) break;
    prev = y;
  }
  for (int b = 0; b < B; ++b) {
    const auto i = static_cast<std::size_t>(b);
    out.sentences.push_back(finish(ad::concat_rows(rows[i]), tau));
    out.truncated.push_back(alive[i]);
  }
  return out;
}

RelaxedDecode Seq2SeqTranslator::translate(const ParamSet& params,
                                           std::span<const ad::Var> sources, double tau,
                                           Rng& rng) const {
  return relaxed_decode(*model_, params, sources, max_len_, tau, rng);
}

PermutationTranslator::PermutationTranslator(std::vector<int> mapping)
    : mapping_(std::move(mapping)) {
  const auto V = static_cast<Eigen::Index>(mapping_.size());
  matrix_ = ad::Matrix::Zero(V, V);
  std::vector<bool> hit(mapping_.size(), false);
  for (Eigen::Index i = 0; i < V; ++i) {
    const int j = mapping_[static_cast<std::size_t>(i)];
    if (j < 0 || j >= V || hit[static_cast<std::size_t>(j)]) {
      throw std::invalid_argument("PermutationTranslator: mapping is not a permutation");
    }
    hit[static_cast<std::size_t>(j)] = true;
    matrix_(i, j) = 1.0;
  }
}

RelaxedDecode PermutationTranslator::translate(const ParamSet&,
                                               std::span<const ad::Var> sources, double tau,
                                               Rng&) const {
  RelaxedDecode out;
  const ad::Var p = ad::constant(matrix_);
  for (const auto& s : sources) {
    out.sentences.push_back(finish(ad::matmul(s, p), tau));
    out.truncated.push_back(false);
  }
  return out;
}

std::vector<int> pivot_mapping(int vocab_size, std::uint64_t seed) {
  std::vector<int> content;
  for (int i = kNumSpecials; i < vocab_size; ++i) content.push_back(i);
  Rng rng(derive_seed(seed, "pivot"));
  rng.shuffle(content.begin(), content.end());
  std::vector<int> mapping(static_cast<std::size_t>(vocab_size));
  std::iota(mapping.begin(), mapping.begin() + kNumSpecials, 0);
  std::copy(content.begin(), content.end(), mapping.begin() + kNumSpecials);
  return mapping;
}

std::vector<int> invert_mapping(std::span<const int> mapping) {
  std::vector<int> inv(mapping.size());
  for (std::size_t i = 0; i < mapping.size(); ++i) inv[static_cast<std::size_t>(mapping[i])] = static_cast<int>(i);
  return inv;
}

double pretrain_translator(const DialogueModel& model, ParamSet& params,
                           std::span<const DialoguePair> pairs, std::span<const int> mapping,
                           bool inverse, int steps, int batch_size, double lr,
                           std::uint64_t seed) {
  if (pairs.empty() || steps <= 0) return 0.0;
  Rng rng(derive_seed(seed, inverse ? "translator-backward" : "translator-forward"));
  Adam opt(lr);
  auto mapped = [&](const TokenIds& s) {
    TokenIds m;
    for (int t : s) m.push_back(mapping[static_cast<std::size_t>(t)]);
    return m;
  };
  double last = 0.0;
  for (int step = 0; step < steps; ++step) {
    std::vector<DialoguePair> batch;
    for (int b = 0; b < batch_size; ++b) {
      const auto& pair = pairs[static_cast<std::size_t>(rng.below(pairs.size()))];
      const TokenIds& s = rng.bernoulli(0.5) ? pair.query : pair.response;
      DialoguePair d;
      d.query = inverse ? mapped(s) : s;
      d.response = inverse ? s : mapped(s);
      batch.push_back(std::move(d));
    }
    ParamSet p = params.as_leaves();
    ad::Var loss = mean_nll(model, p, make_seq_batch(Batch::from_pairs(std::move(batch)),
                                                     model.vocab_size()));
    last = loss.item();
    opt.step(params, ad::grad(loss, p.tensors()));
  }
  return last;
}

std::vector<AugmentResult> augment_sentence_level(
    std::span<const DialoguePair> pairs, int vocab_size, const Translator& forward,
    const ParamSet& forward_params, const Translator& backward,
    const ParamSet& backward_params, double tau, Rng& rng, bool augment_query) {
  std::vector<AugmentResult> out;
  if (pairs.empty()) return out;
  std::vector<ad::Var> sources;
  for (const auto& pair : pairs) {
    if (pair.query.empty() || pair.response.empty()) {
      throw std::invalid_argument("augment_sentence_level: empty sentence");
    }
    if (augment_query) sources.push_back(ad::constant(one_hot_rows(pair.query, vocab_size)));
    sources.push_back(ad::constant(one_hot_rows(pair.response, vocab_size)));
  }
  const RelaxedDecode pivot = forward.translate(forward_params, sources, tau, rng);
  std::vector<ad::Var> pivot_rows;
  for (const auto& s : pivot.sentences) pivot_rows.push_back(s.probs);
  const RelaxedDecode back = backward.translate(backward_params, pivot_rows, tau, rng);

  std::size_t k = 0;
  for (const auto& pair : pairs) {
    AugmentResult r;
    r.pair = pair;
    r.pair.origin = Origin::sent_aug;
    r.pair.parent_id = pair.id;
    r.pair.id = augmented_id(pair.id);
    if (augment_query) {
      r.query = back.sentences[k];
      r.flagged = pivot.truncated[k] || back.truncated[k];
      ++k;
    } else {
      r.query = RelaxedSentence::from_ids(pair.query, vocab_size);
      r.query.temperature = tau;
    }
    r.response = back.sentences[k];
    r.flagged = r.flagged || pivot.truncated[k] || back.truncated[k];
    ++k;
    r.pair.query = r.query.hard;
    r.pair.response = r.response.hard;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace datamanip
