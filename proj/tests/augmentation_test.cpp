#include "datamanip/augmentation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fd_check.hpp"

using namespace datamanip;
namespace ad = datamanip::ad;

namespace {

constexpr int kVocab = 12;

DialoguePair pair_of(TokenIds q, TokenIds r, std::int64_t id = 0) {
  DialoguePair p;
  p.query = std::move(q);
  p.response = std::move(r);
  p.id = id;
  return p;
}

MlmDims tiny_mlm() {
  MlmDims d;
  d.dim = 8;
  d.heads = 2;
  d.layers = 1;
  d.ff_hidden = 16;
  return d;
}

struct TinyMlm {
  ParamSet params;
  MaskedLM mlm;
  explicit TinyMlm(std::uint64_t seed = 3) {
    Rng rng(seed);
    mlm = MaskedLM::create(params, kVocab, tiny_mlm(), rng);
  }
};

void expect_rows_are_distributions(const ad::Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    EXPECT_NEAR(m.row(r).sum(), 1.0, 1e-5);
    EXPECT_GE(m.row(r).minCoeff(), 0.0);
  }
}

// Binomial 3-sigma band around p for n draws.
double band(double p, int n) { return 3.0 * std::sqrt(p * (1.0 - p) / n); }

}  // namespace

TEST(GumbelSoftmax, DominantLogitWinsAtLowTemperature) {
  Rng rng(1);
  ad::Var logits = ad::constant(ad::Matrix{{10.0, 0.0, 0.0}});
  int wins = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    wins += row_argmax(gumbel_softmax(logits, 0.1, false, rng).value())[0] == 0 ? 1 : 0;
  }
  EXPECT_GT(static_cast<double>(wins) / n, 0.999);
}

TEST(GumbelSoftmax, UniformLogitsGiveUniformArgmax) {
  Rng rng(2);
  const int K = 4, n = 10000;
  ad::Var logits = ad::constant(ad::Matrix::Zero(1, K));
  std::vector<int> counts(K, 0);
  for (int i = 0; i < n; ++i) counts[row_argmax(gumbel_softmax(logits, 1.0, true, rng).value())[0]]++;
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 1.0 / K, band(1.0 / K, n));
}

TEST(GumbelSoftmax, HardIsOneHotWithSoftGradient) {
  Rng rng(3);
  ad::Var logits = ad::leaf(ad::Matrix{{0.3, -0.2, 1.1, 0.0}, {2.0, 0.1, -1.0, 0.5}});
  ad::Var y = gumbel_softmax(logits, 0.7, true, rng);
  for (Eigen::Index r = 0; r < 2; ++r) {
    EXPECT_DOUBLE_EQ(y.value().row(r).sum(), 1.0);
    EXPECT_DOUBLE_EQ(y.value().row(r).maxCoeff(), 1.0);
    EXPECT_EQ((y.value().row(r).array() == 0.0).count(), 3);
  }
  ad::Matrix c{{1.0, -2.0, 0.5, 3.0}, {0.2, 0.0, -1.0, 1.0}};
  auto g = ad::grad(ad::sum(ad::mul(y, ad::constant(c))), std::vector<ad::Var>{logits});
  EXPECT_GT(g[0].value().norm(), 1e-6);
}

TEST(GumbelSoftmax, SoftGradientMatchesFiniteDifferences) {
  Rng rng(4);
  const ad::Matrix noise = gumbel_noise(2, 5, rng);
  const ad::Matrix x0{{0.3, -0.2, 1.1, 0.0, 0.4}, {2.0, 0.1, -1.0, 0.5, 0.0}};
  const ad::Matrix c{{1.0, -2.0, 0.5, 3.0, 0.1}, {0.2, 0.0, -1.0, 1.0, 2.0}};
  auto f = [&](const ad::Matrix& x) {
    return ad::sum(ad::mul(gumbel_softmax(ad::constant(x), 0.8, false, noise), ad::constant(c))).item();
  };
  ad::Var x = ad::leaf(x0);
  auto g = ad::grad(ad::sum(ad::mul(gumbel_softmax(x, 0.8, false, noise), ad::constant(c))),
                    std::vector<ad::Var>{x});
  EXPECT_LT(testing_fd::max_rel_error(g[0].value(), testing_fd::numeric_grad(f, x0)), 1e-6);
}

TEST(GumbelSoftmax, RejectsNonPositiveTemperature) {
  Rng rng(5);
  ad::Var logits = ad::constant(ad::Matrix::Zero(1, 3));
  EXPECT_THROW(gumbel_softmax(logits, 0.0, false, rng), std::invalid_argument);
  EXPECT_THROW(gumbel_softmax(logits, -1.0, true, rng), std::invalid_argument);
}

TEST(GumbelSoftmax, LowTemperatureApproachesOneHot) {
  Rng rng(6);
  ad::Var logits = ad::constant(ad::Matrix{{0.5, -1.0, 2.0, 0.0, 1.0}});
  double tv = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const ad::Matrix y = gumbel_softmax(logits, 0.01, false, rng).value();
    ad::Matrix hot = ad::Matrix::Zero(1, 5);
    hot(0, row_argmax(y)[0]) = 1.0;
    tv += 0.5 * (y - hot).cwiseAbs().sum();
  }
  EXPECT_LT(tv / n, 0.05);
}

TEST(GumbelSoftmax, SamplesAreDistributions) {
  Rng rng(7);
  ad::Var logits = ad::constant(ad::Matrix::Random(6, 9) * 3.0);
  for (double tau : {0.1, 1.0, 5.0}) {
    expect_rows_are_distributions(gumbel_softmax(logits, tau, false, rng).value());
    expect_rows_are_distributions(gumbel_softmax(logits, tau, true, rng).value());
  }
}

TEST(MaskPositions, CountDistinctAndNeverSpecial) {
  Rng rng(8);
  const TokenIds ids{kBos, 4, 5, 6, kEos, 7, 8, 9, 10, 11, 4, 5, kPad};
  for (double rate : {0.0, 0.15, 0.3, 0.5, 0.9}) {
    auto pos = choose_mask_positions(ids, rate, rng);
    const auto wanted = static_cast<std::size_t>(std::ceil(rate * ids.size() - 1e-9));
    EXPECT_EQ(pos.size(), std::min<std::size_t>(wanted, 10));
    EXPECT_TRUE(std::is_sorted(pos.begin(), pos.end()));
    EXPECT_EQ(std::adjacent_find(pos.begin(), pos.end()), pos.end());
    for (int p : pos) EXPECT_FALSE(is_special(ids[static_cast<std::size_t>(p)]));
  }
  EXPECT_THROW(choose_mask_positions(ids, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(choose_mask_positions(ids, -0.1, rng), std::invalid_argument);
}

TEST(MaskedLM, PredictiveRowsAreDistributionsOverContent) {
  TinyMlm m;
  const std::vector<int> ids{4, 5, m.mlm.mask_id(), kEos, 7, m.mlm.mask_id()};
  ad::Matrix p = ad::softmax_rows(m.mlm.logits(m.params, ids)).value();
  expect_rows_are_distributions(p);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (int s = 0; s < kNumSpecials; ++s) EXPECT_LT(p(r, s), 1e-12);
  }
}

TEST(WordLevel, ZeroRateReturnsInput) {
  TinyMlm m;
  Rng rng(9);
  auto pair = pair_of({4, 5, 6}, {7, 8}, 3);
  auto out = augment_word_level(pair, m.mlm, m.params, 0.0, 1.0, rng);
  EXPECT_EQ(out.pair.query, pair.query);
  EXPECT_EQ(out.pair.response, pair.response);
  EXPECT_EQ(out.pair.origin, Origin::word_aug);
  EXPECT_EQ(out.pair.parent_id, 3);
  EXPECT_FALSE(out.flagged);
  EXPECT_EQ(out.query.probs.value(), one_hot_rows(pair.query, kVocab));
}

TEST(WordLevel, ChangesAtMostCeilRateTimesLength) {
  TinyMlm m;
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    TokenIds q, r;
    const int lq = 1 + static_cast<int>(rng.below(10)), lr = 1 + static_cast<int>(rng.below(10));
    for (int i = 0; i < lq; ++i) q.push_back(kNumSpecials + static_cast<int>(rng.below(kVocab - kNumSpecials)));
    for (int i = 0; i < lr; ++i) r.push_back(kNumSpecials + static_cast<int>(rng.below(kVocab - kNumSpecials)));
    auto out = augment_word_level(pair_of(q, r), m.mlm, m.params, 0.15, 1.0, rng);
    auto changed = [](const TokenIds& a, const TokenIds& b) {
      int n = 0;
      for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i] ? 1 : 0;
      return n;
    };
    ASSERT_EQ(out.pair.query.size(), q.size());
    ASSERT_EQ(out.pair.response.size(), r.size());
    EXPECT_LE(changed(q, out.pair.query), static_cast<int>(std::ceil(0.15 * lq - 1e-9)));
    EXPECT_LE(changed(r, out.pair.response), static_cast<int>(std::ceil(0.15 * lr - 1e-9)));
    for (int t : out.pair.query) EXPECT_FALSE(is_special(t));
    for (int t : out.pair.response) EXPECT_FALSE(is_special(t));
    expect_rows_are_distributions(out.query.probs.value());
    expect_rows_are_distributions(out.response.probs.value());
    EXPECT_EQ(out.query.hard, row_argmax(out.query.probs.value()));
  }
}

TEST(WordLevel, SpecialTokensStayInPlace) {
  TinyMlm m;
  Rng rng(11);
  auto pair = pair_of({kUnk, 4, kUnk, 5}, {6, kUnk, 7});
  for (int i = 0; i < 50; ++i) {
    auto out = augment_word_level(pair, m.mlm, m.params, 0.5, 1.0, rng);
    EXPECT_EQ(out.pair.query[0], kUnk);
    EXPECT_EQ(out.pair.query[2], kUnk);
    EXPECT_EQ(out.pair.response[1], kUnk);
  }
}

TEST(WordLevel, NoMaskableTokenIsFlaggedAndUnchanged) {
  TinyMlm m;
  Rng rng(12);
  auto pair = pair_of({4, 5}, {kUnk, kUnk});
  auto out = augment_word_level(pair, m.mlm, m.params, 0.5, 1.0, rng, false);
  EXPECT_TRUE(out.flagged);
  EXPECT_EQ(out.pair.response, pair.response);
  EXPECT_EQ(out.pair.query, pair.query);
}

TEST(WordLevel, MaskedMarginalsMatchMlmDistribution) {
  TinyMlm m;
  // One content token in the response, so rate 0.15 always masks exactly it.
  auto pair = pair_of({4, 5, 6}, {7});
  const std::vector<int> masked{4, 5, 6, kEos, m.mlm.mask_id()};
  const ad::Matrix p = ad::softmax_rows(m.mlm.logits(m.params, masked)).value().row(4);
  Rng rng(13);
  const int n = 10000;
  std::vector<int> counts(kVocab, 0);
  for (int i = 0; i < n; ++i) {
    counts[augment_word_level(pair, m.mlm, m.params, 0.15, 1.0, rng, false).pair.response[0]]++;
  }
  for (int v = 0; v < kVocab; ++v) {
    EXPECT_NEAR(static_cast<double>(counts[v]) / n, p(0, v), band(p(0, v), n) + 1e-3) << v;
  }
}

TEST(WordLevel, GradientReachesMlmParameters) {
  TinyMlm m;
  ParamSet leaves = m.params.as_leaves();
  Rng rng(14);
  auto out = augment_word_level(pair_of({4, 5, 6, 7}, {8, 9, 10, 11}), m.mlm, leaves, 0.5, 1.0, rng);
  ad::Matrix c = ad::Matrix::Random(out.response.probs.rows(), kVocab);
  auto g = ad::grad(ad::sum(ad::mul(out.response.probs, ad::constant(c))), leaves.tensors());
  double norm = 0.0;
  for (auto& x : g) norm += x.value().squaredNorm();
  EXPECT_GT(norm, 0.0);
}

TEST(WordLevel, RelaxedSampleGradientMatchesFiniteDifferences) {
  // Common random numbers: the same gumbel noise on both sides of the
  // difference. The soft relaxation is what the straight-through estimator
  // differentiates.
  TinyMlm m;
  const std::vector<int> ids{4, 5, m.mlm.mask_id(), kEos, 7, m.mlm.mask_id()};
  const std::vector<Eigen::Index> rows{2, 5};
  Rng rng(15);
  const ad::Matrix noise = gumbel_noise(2, kVocab, rng);
  const ad::Matrix c = ad::Matrix::Random(2, kVocab);
  const std::size_t out_w = m.params.index_of("mlm.output.weight");
  auto loss = [&](const ParamSet& p) {
    return ad::sum(ad::mul(gumbel_softmax(ad::gather_rows(m.mlm.logits(p, ids), rows), 1.0, false, noise),
                           ad::constant(c)));
  };
  ParamSet leaves = m.params.as_leaves();
  auto g = ad::grad(loss(leaves), std::vector<ad::Var>{leaves[out_w]});
  auto f = [&](const ad::Matrix& w) {
    ParamSet p = m.params.as_constants();
    p.set_value(out_w, w);
    return loss(p).item();
  };
  const ad::Matrix numeric = testing_fd::numeric_grad(f, m.params[out_w].value());
  EXPECT_GT(numeric.norm(), 1e-6);
  EXPECT_LT(testing_fd::max_rel_error(g[0].value(), numeric, 1e-6), 1e-2);
}

TEST(WordLevel, SeededDeterminism) {
  TinyMlm m;
  auto pair = pair_of({4, 5, 6, 7, 8}, {9, 10, 11, 4});
  Rng a(16), b(16);
  auto x = augment_word_level(pair, m.mlm, m.params, 0.3, 1.0, a);
  auto y = augment_word_level(pair, m.mlm, m.params, 0.3, 1.0, b);
  EXPECT_EQ(x.pair.query, y.pair.query);
  EXPECT_EQ(x.pair.response, y.pair.response);
  EXPECT_EQ(x.response.probs.value(), y.response.probs.value());
}

TEST(SentenceLevel, PivotAndInverseReproduceInput) {
  const auto fwd = pivot_mapping(kVocab, 5);
  PermutationTranslator there(fwd), back(invert_mapping(fwd));
  std::vector<DialoguePair> pairs{pair_of({4, 5, 6}, {7, 8}, 0), pair_of({9}, {10, 11, 4, 5}, 1)};
  Rng rng(17);
  auto out = augment_sentence_level(pairs, kVocab, there, {}, back, {}, 1.0, rng);
  ASSERT_EQ(out.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(out[i].pair.query, pairs[i].query);
    EXPECT_EQ(out[i].pair.response, pairs[i].response);
    EXPECT_EQ(out[i].pair.origin, Origin::sent_aug);
    EXPECT_EQ(out[i].pair.parent_id, pairs[i].id);
    EXPECT_FALSE(out[i].flagged);
  }
}

TEST(SentenceLevel, SynonymSwapInvolution) {
  // Pivot swaps content tokens in pairs (4<->5, 6<->7, ...); applying it twice
  // is the identity.
  std::vector<int> swap(kVocab);
  std::iota(swap.begin(), swap.end(), 0);
  for (int i = kNumSpecials; i + 1 < kVocab; i += 2) std::swap(swap[i], swap[i + 1]);
  PermutationTranslator t(swap);
  std::vector<DialoguePair> pairs{pair_of({4, 6, 8, 10}, {5, 7, 9, 11})};
  Rng rng(18);
  auto out = augment_sentence_level(pairs, kVocab, t, {}, t, {}, 1.0, rng);
  EXPECT_EQ(out[0].pair.query, pairs[0].query);
  EXPECT_EQ(out[0].pair.response, pairs[0].response);
}

TEST(SentenceLevel, CopyPivotTranslatorsReproduceInput) {
  ModelDims dims{16, 16, 1, 1, 32, kDefaultMaxSequenceLength, false};
  auto f = build_model(Architecture::seq2seq, dims, kVocab, 1);
  auto b = build_model(Architecture::seq2seq, dims, kVocab, 2);
  std::vector<int> identity(kVocab);
  std::iota(identity.begin(), identity.end(), 0);
  std::vector<DialoguePair> pairs{pair_of({4, 5, 6}, {7, 8}, 0), pair_of({9, 10}, {11, 4, 5}, 1),
                                  pair_of({6, 7, 8, 9}, {10}, 2)};
  pretrain_translator(*f.model, f.params, pairs, identity, false, 400, 8, 0.02, 1);
  pretrain_translator(*b.model, b.params, pairs, identity, true, 400, 8, 0.02, 1);
  Seq2SeqTranslator there(std::shared_ptr<const DialogueModel>(std::move(f.model)), 8);
  Seq2SeqTranslator back(std::shared_ptr<const DialogueModel>(std::move(b.model)), 8);
  Rng rng(19);
  // A low temperature makes the sampled decode effectively greedy.
  auto out = augment_sentence_level(pairs, kVocab, there, f.params, back, b.params, 0.05, rng);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(out[i].pair.query, pairs[i].query);
    EXPECT_EQ(out[i].pair.response, pairs[i].response);
  }
}

TEST(SentenceLevel, OutputLengthBounded) {
  ModelDims dims{8, 8, 1, 1, 16, kDefaultMaxSequenceLength, false};
  auto f = build_model(Architecture::seq2seq, dims, kVocab, 3);
  auto b = build_model(Architecture::seq2seq, dims, kVocab, 4);
  const int max_len = 3;
  Seq2SeqTranslator there(std::shared_ptr<const DialogueModel>(std::move(f.model)), max_len);
  Seq2SeqTranslator back(std::shared_ptr<const DialogueModel>(std::move(b.model)), max_len);
  std::vector<DialoguePair> pairs;
  for (int i = 0; i < 20; ++i) pairs.push_back(pair_of({4, 5, 6, 7}, {8, 9, 10}, i));
  Rng rng(20);
  auto out = augment_sentence_level(pairs, kVocab, there, f.params, back, b.params, 1.0, rng);
  for (const auto& r : out) {
    EXPECT_GE(r.pair.query.size(), 1u);
    EXPECT_LE(r.pair.query.size(), static_cast<std::size_t>(max_len));
    EXPECT_LE(r.pair.response.size(), static_cast<std::size_t>(max_len));
    for (int t : r.pair.response) EXPECT_NE(t, kEos);
    expect_rows_are_distributions(r.response.probs.value());
  }
}

TEST(SentenceLevel, TruncationFlagWhenDecodeNeverEnds) {
  ModelDims dims{8, 8, 1, 1, 16, kDefaultMaxSequenceLength, false};
  auto f = build_model(Architecture::seq2seq, dims, kVocab, 5);
  Rng rng(21);
  // max_len 1: EOS is blocked at the first step, so no decode can finish.
  auto d = relaxed_decode(*f.model, f.params,
                          std::vector<ad::Var>{ad::constant(one_hot_rows(TokenIds{4, 5}, kVocab))}, 1,
                          1.0, rng);
  ASSERT_EQ(d.truncated.size(), 1u);
  EXPECT_TRUE(d.truncated[0]);
  EXPECT_EQ(d.sentences[0].size(), 1u);
}

TEST(SentenceLevel, GradientReachesBothTranslators) {
  ModelDims dims{8, 8, 1, 1, 16, kDefaultMaxSequenceLength, false};
  auto f = build_model(Architecture::seq2seq, dims, kVocab, 6);
  auto b = build_model(Architecture::seq2seq, dims, kVocab, 7);
  Seq2SeqTranslator there(std::shared_ptr<const DialogueModel>(std::move(f.model)), 4);
  Seq2SeqTranslator back(std::shared_ptr<const DialogueModel>(std::move(b.model)), 4);
  ParamSet fp = f.params.as_leaves(), bp = b.params.as_leaves();
  Rng rng(22);
  auto out = augment_sentence_level(std::vector<DialoguePair>{pair_of({4, 5}, {6, 7})}, kVocab, there,
                                    fp, back, bp, 1.0, rng);
  ad::Matrix c = ad::Matrix::Random(out[0].response.probs.rows(), kVocab);
  ad::Var loss = ad::sum(ad::mul(out[0].response.probs, ad::constant(c)));
  auto gf = ad::grad(loss, fp.tensors());
  auto gb = ad::grad(loss, bp.tensors());
  double nf = 0.0, nb = 0.0;
  for (auto& x : gf) nf += x.value().squaredNorm();
  for (auto& x : gb) nb += x.value().squaredNorm();
  EXPECT_GT(nf, 0.0);
  EXPECT_GT(nb, 0.0);
}

TEST(SentenceLevel, SeededDeterminism) {
  ModelDims dims{8, 8, 1, 1, 16, kDefaultMaxSequenceLength, false};
  auto f = build_model(Architecture::seq2seq, dims, kVocab, 8);
  auto b = build_model(Architecture::seq2seq, dims, kVocab, 9);
  Seq2SeqTranslator there(std::shared_ptr<const DialogueModel>(std::move(f.model)), 6);
  Seq2SeqTranslator back(std::shared_ptr<const DialogueModel>(std::move(b.model)), 6);
  std::vector<DialoguePair> pairs{pair_of({4, 5, 6}, {7, 8}), pair_of({9, 10}, {11})};
  Rng r1(23), r2(23);
  auto x = augment_sentence_level(pairs, kVocab, there, f.params, back, b.params, 1.0, r1);
  auto y = augment_sentence_level(pairs, kVocab, there, f.params, back, b.params, 1.0, r2);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(x[i].pair.query, y[i].pair.query);
    EXPECT_EQ(x[i].pair.response, y[i].pair.response);
    EXPECT_EQ(x[i].flagged, y[i].flagged);
  }
}

TEST(PivotMapping, PermutesContentAndFixesSpecials) {
  const auto m = pivot_mapping(20, 3);
  std::vector<int> sorted = m;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  for (int s = 0; s < kNumSpecials; ++s) EXPECT_EQ(m[static_cast<std::size_t>(s)], s);
  const auto inv = invert_mapping(m);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(inv[static_cast<std::size_t>(m[static_cast<std::size_t>(i)])], i);
  EXPECT_EQ(pivot_mapping(20, 3), m);
  EXPECT_THROW(PermutationTranslator(std::vector<int>{0, 0, 1}), std::invalid_argument);
}
