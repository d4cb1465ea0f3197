#include "datamanip/meta_trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "datamanip/checkpoint.hpp"
#include "tiny_setups.hpp"

using namespace datamanip;
namespace ad = datamanip::ad;

namespace {

SyntheticCorpus small_corpus(double noise = 0.3) {
  CorpusSpec spec;
  spec.n_pairs = 120;
  spec.vocab_size = 16;
  spec.noise_rate = noise;
  spec.seed = 5;
  spec.max_len = 5;
  return make_synthetic_corpus(spec);
}

TrainConfig small_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.model = {8, 8, 1, 1, 16, kDefaultMaxSequenceLength, false};
  auto& m = c.manipulation;
  m.encoder = {8, 2, 1, 16, 2 * kDefaultMaxSequenceLength + 1};
  m.scorer_hidden = 8;
  m.mlm = {8, 2, 1, 16, 2 * kDefaultMaxSequenceLength + 1};
  m.translator = {8, 8, 1, 1, 16, kDefaultMaxSequenceLength, false};
  m.translate_max_len = 6;
  m.mlm_pretrain_steps = 3;
  m.translator_pretrain_steps = 3;
  m.pretrain_batch = 4;
  c.train_batch = 4;
  c.valid_batch = 6;
  c.iterations = 6;
  c.seed = 3;
  return c;
}

std::vector<std::string> report_lines(const TrainResult& r) {
  std::vector<std::string> out;
  for (const auto& rec : r.records) out.push_back(rec.to_json());
  return out;
}

}  // namespace

TEST(ScalarToy, InnerStepClosedForm) {
  tiny::ScalarToy toy;
  auto inner = inner_update(tiny::scalar("theta", 0.0).as_leaves(), tiny::scalar("phi", 0.0), toy, 0.1);
  ASSERT_TRUE(inner.finite);
  EXPECT_NEAR(inner.theta_prime[0].item(), 0.1, 1e-12);
  EXPECT_NEAR(inner.loss, 0.5, 1e-12);
}

TEST(ScalarToy, HypergradientAndMetaStepClosedForm) {
  tiny::ScalarToy toy;
  ParamSet phi = tiny::scalar("phi", 0.0);
  auto g = hypergradient(tiny::scalar("theta", 0.0).as_leaves(), phi.as_leaves(), toy, 0.1);
  ASSERT_TRUE(g.finite);
  EXPECT_NEAR(g.grads[0](0, 0), -0.04, 1e-12);
  EXPECT_NEAR(g.validation_loss, 0.16, 1e-12);
  EXPECT_NEAR(g.norm, 0.04, 1e-12);
  ASSERT_TRUE(meta_update(phi, g, 1.0));
  EXPECT_NEAR(phi[0].item(), 0.04, 1e-12);
}

TEST(ScalarToy, FiniteDifferenceCheckAgrees) {
  tiny::ScalarToy toy;
  auto check = hypergradient_check(tiny::scalar("theta", 0.0), tiny::scalar("phi", 0.0), toy, 0.1);
  ASSERT_EQ(check.coordinates.size(), 1u);
  EXPECT_NEAR(check.analytic[0], -0.04, 1e-12);
  EXPECT_NEAR(check.numeric[0], -0.04, 1e-6);
  EXPECT_LT(check.max_rel_error, 1e-6);
}

TEST(ScalarToy, MetaStepMovesLookaheadTowardValidationOptimum) {
  tiny::ScalarToy toy;
  const ParamSet theta = tiny::scalar("theta", 0.0);
  ParamSet phi = tiny::scalar("phi", 0.0);
  const double before = inner_update(theta.as_leaves(), phi, toy, 0.1).theta_prime[0].item();
  meta_update(phi, hypergradient(theta.as_leaves(), phi.as_leaves(), toy, 0.1), 1.0);
  const double after = inner_update(theta.as_leaves(), phi, toy, 0.1).theta_prime[0].item();
  EXPECT_GT(phi[0].item(), 0.0);
  EXPECT_LT(std::abs(after - 0.5), std::abs(before - 0.5));
}

TEST(ScalarToy, ZeroAlphaLeavesThetaAndGivesZeroHypergradient) {
  tiny::ScalarToy toy;
  const ParamSet theta = tiny::scalar("theta", 0.3);
  auto inner = inner_update(theta.as_leaves(), tiny::scalar("phi", 0.7), toy, 0.0);
  EXPECT_EQ(inner.theta_prime[0].item(), 0.3);
  auto g = hypergradient(theta.as_leaves(), tiny::scalar("phi", 0.7).as_leaves(), toy, 0.0);
  EXPECT_EQ(g.grads[0](0, 0), 0.0);
  auto check = hypergradient_check(theta, tiny::scalar("phi", 0.7), toy, 0.0);
  EXPECT_NEAR(check.numeric[0], 0.0, 1e-8);
}

TEST(ScalarToy, ZeroBetaLeavesPhi) {
  tiny::ScalarToy toy;
  ParamSet phi = tiny::scalar("phi", 0.25);
  auto g = hypergradient(tiny::scalar("theta", 0.0).as_leaves(), phi.as_leaves(), toy, 0.1);
  ASSERT_TRUE(meta_update(phi, g, 0.0));
  EXPECT_EQ(phi[0].item(), 0.25);
}

TEST(MetaUpdate, SkipsNonFiniteHypergradient) {
  ParamSet phi = tiny::scalar("phi", 1.0);
  Hypergradient g;
  g.grads = {ad::Matrix::Constant(1, 1, std::nan(""))};
  EXPECT_FALSE(meta_update(phi, g, 1.0));
  EXPECT_EQ(phi[0].item(), 1.0);
  g.grads = {ad::Matrix::Constant(1, 1, 1.0)};
  g.finite = false;
  EXPECT_FALSE(meta_update(phi, g, 1.0));
  EXPECT_EQ(phi[0].item(), 1.0);
}

TEST(InnerUpdate, NonFiniteLossAborts) {
  class Broken final : public BilevelObjective {
   public:
    ad::Var training_loss(const ParamSet& theta, const ParamSet&) override {
      return ad::mul(theta[0], ad::scalar(std::nan("")));
    }
    ad::Var validation_loss(const ParamSet& theta) override { return theta[0]; }
  } broken;
  const ParamSet theta = tiny::scalar("theta", 2.0);
  auto inner = inner_update(theta.as_leaves(), tiny::scalar("phi", 0.0), broken, 0.1);
  EXPECT_FALSE(inner.finite);
  EXPECT_EQ(inner.theta_prime[0].item(), 2.0);
  EXPECT_FALSE(hypergradient(theta.as_leaves(), tiny::scalar("phi", 0.0).as_leaves(), broken, 0.1).finite);
}

TEST(HypergradientCheck, RejectsNonDeterministicObjective) {
  class Noisy final : public BilevelObjective {
   public:
    ad::Var training_loss(const ParamSet& theta, const ParamSet& phi) override {
      return ad::mul(ad::mul(theta[0], phi[0]), ad::scalar(rng_.uniform()));
    }
    ad::Var validation_loss(const ParamSet& theta) override { return ad::mul(theta[0], theta[0]); }

   private:
    Rng rng_{1};
  } noisy;
  EXPECT_THROW(hypergradient_check(tiny::scalar("theta", 1.0), tiny::scalar("phi", 1.0), noisy, 0.1),
               std::runtime_error);
}

TEST(HypergradientCheck, WeightingPathOnTinySeq2Seq) {
  auto s = tiny::weighting_setup();
  ASSERT_GE(s->core_phi().scalar_count(), 50u);
  auto check = hypergradient_check(s->theta, s->core_phi(), *s->core, 0.5, 1e-4, 50, 1);
  EXPECT_EQ(check.coordinates.size(), 50u);
  EXPECT_LT(check.max_rel_error, 1e-2);
  double norm = 0.0;
  for (double a : check.analytic) norm += a * a;
  EXPECT_GT(norm, 0.0);
}

TEST(HypergradientCheck, ZeroAlphaOnTinySeq2Seq) {
  auto s = tiny::weighting_setup();
  auto check = hypergradient_check(s->theta, s->core_phi(), *s->core, 0.0, 1e-4, 20, 1);
  for (std::size_t i = 0; i < check.analytic.size(); ++i) {
    EXPECT_EQ(check.analytic[i], 0.0);
    EXPECT_NEAR(check.numeric[i], 0.0, 1e-8);
  }
}

TEST(InnerUpdate, SmallStepDecreasesTrainingLoss) {
  auto s = tiny::weighting_setup();
  const ParamSet phi = s->net->params().as_constants();
  auto inner = inner_update(s->theta.as_leaves(), phi, *s->objective, 1e-3);
  const double after = s->objective->training_loss(inner.theta_prime.as_constants(), phi).item();
  EXPECT_LT(after, inner.loss);
}

TEST(DialogueObjective, SameNoiseSeedGivesSameLoss) {
  auto corpus = small_corpus();
  TrainConfig c = small_config(TrainMode::manipulated);
  ManipulationNet net(corpus.vocab.size(), c.manipulation, 1);
  auto built = build_model(c.arch, c.model, corpus.vocab.size(), 1);
  DialogueObjective obj(*built.model, &net, WeightNorm::sum_to_one);
  std::vector<DialoguePair> train(corpus.corpus.train.begin(), corpus.corpus.train.begin() + 6);
  std::vector<DialoguePair> valid(corpus.corpus.valid.begin(), corpus.corpus.valid.begin() + 6);
  obj.set_batches(Batch::from_pairs(train), Batch::from_pairs(valid));
  obj.set_noise(1.0, 11);
  const double a = obj.training_loss(built.params, net.params()).item();
  const double b = obj.training_loss(built.params, net.params()).item();
  EXPECT_EQ(a, b);
  ASSERT_TRUE(obj.last().has_value());
  EXPECT_EQ(obj.last()->batch.size(), 12u);
}

TEST(TrainConfig, ValidationAndSchedule) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.meta_period = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.iterations = 11;
  c.tau = 1.0;
  c.tau_final = 0.5;
  EXPECT_DOUBLE_EQ(c.tau_at(1), 1.0);
  EXPECT_DOUBLE_EQ(c.tau_at(6), 0.75);
  EXPECT_DOUBLE_EQ(c.tau_at(11), 0.5);
  EXPECT_EQ(parse_train_mode(train_mode_name(TrainMode::vanilla)), TrainMode::vanilla);
  EXPECT_EQ(parse_meta_optimizer(meta_optimizer_name(MetaOptimizer::adam)), MetaOptimizer::adam);
  EXPECT_THROW(parse_train_mode("both"), std::invalid_argument);
}

TEST(IterationRecord, JsonUsesNullForMissingStatistics) {
  IterationRecord r;
  r.iteration = 3;
  r.mean_weight_original = 1.5;
  auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["iteration"], 3);
  EXPECT_EQ(j["mean_weight_original"], 1.5);
  EXPECT_TRUE(j["mean_weight_noisy"].is_null());
  EXPECT_FALSE(j.contains("valid_nll_full"));
  r.valid_nll_full = 2.0;
  EXPECT_EQ(nlohmann::json::parse(r.to_json())["valid_nll_full"], 2.0);
}

TEST(Trainer, DegenerateManipulationEqualsVanilla) {
  auto corpus = small_corpus();
  TrainConfig v = small_config(TrainMode::vanilla);
  TrainConfig m = small_config(TrainMode::manipulated);
  m.manipulation.gate_mode = GateMode::closed;
  m.manipulation.force_uniform_weights = true;
  v.iterations = m.iterations = 15;
  auto a = train(corpus.corpus, v, corpus.vocab.size());
  auto b = train(corpus.corpus, m, corpus.vocab.size());
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_NEAR(a.records[i].l_dm, b.records[i].l_dm, 1e-7);
    EXPECT_NEAR(a.records[i].valid_nll, b.records[i].valid_nll, 1e-7);
    EXPECT_EQ(b.records[i].n_augmented, 0);
  }
  EXPECT_NEAR(a.final_valid_nll, b.final_valid_nll, 1e-7);
}

TEST(Trainer, ReportHasOneRecordPerIterationAndIsDeterministic) {
  auto corpus = small_corpus();
  TrainConfig c = small_config(TrainMode::manipulated);
  std::ostringstream r1, r2, w1, a1;
  TrainHooks h1, h2;
  h1.logs.report = &r1;
  h1.logs.weights = &w1;
  h1.logs.augmentation = &a1;
  h2.logs.report = &r2;
  auto x = train(corpus.corpus, c, corpus.vocab.size(), h1);
  auto y = train(corpus.corpus, c, corpus.vocab.size(), h2);
  ASSERT_EQ(x.records.size(), static_cast<std::size_t>(c.iterations));
  for (int i = 0; i < c.iterations; ++i) EXPECT_EQ(x.records[static_cast<std::size_t>(i)].iteration, i + 1);
  EXPECT_EQ(report_lines(x), report_lines(y));
  EXPECT_EQ(r1.str(), r2.str());
  ASSERT_TRUE(x.records.back().valid_nll_full.has_value());
  EXPECT_EQ(x.final_valid_nll, *x.records.back().valid_nll_full);

  // Weight log: header plus one line per instance in the loss.
  std::size_t expected_rows = 0, aug_rows = 0;
  for (const auto& rec : x.records) {
    expected_rows += static_cast<std::size_t>(rec.n_instances);
    aug_rows += static_cast<std::size_t>(c.train_batch);
  }
  auto lines = [](const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); };
  EXPECT_EQ(lines(w1.str()), expected_rows + 1);
  EXPECT_EQ(lines(a1.str()), aug_rows + 1);
}

TEST(Trainer, MetaPeriodTwoUpdatesOnEvenIterations) {
  auto corpus = small_corpus();
  TrainConfig c = small_config(TrainMode::manipulated);
  c.meta_period = 2;
  auto r = train(corpus.corpus, c, corpus.vocab.size());
  for (const auto& rec : r.records) EXPECT_EQ(rec.meta, rec.iteration % 2 == 0) << rec.iteration;
}

TEST(Trainer, VanillaNeverRunsMetaSteps) {
  auto corpus = small_corpus();
  auto r = train(corpus.corpus, small_config(TrainMode::vanilla), corpus.vocab.size());
  for (const auto& rec : r.records) {
    EXPECT_FALSE(rec.meta);
    EXPECT_EQ(rec.n_augmented, 0);
    EXPECT_EQ(rec.mean_weight_original, 1.0);
  }
}

TEST(Trainer, CleanNoisyStatisticsWhenLabelsKnown) {
  auto corpus = small_corpus();
  TrainHooks hooks;
  for (const auto& p : corpus.corpus.train) {
    if (corpus.is_noisy(p.id)) hooks.noisy_ids.insert(p.id);
  }
  ASSERT_FALSE(hooks.noisy_ids.empty());
  auto r = train(corpus.corpus, small_config(TrainMode::manipulated), corpus.vocab.size(), hooks);
  bool any = false;
  for (const auto& rec : r.records) any = any || std::isfinite(rec.mean_weight_noisy);
  EXPECT_TRUE(any);
  for (const auto& [id, st] : r.instances) {
    EXPECT_GE(id, 0);
    EXPECT_GE(st.seen, 1);
    EXPECT_LE(st.augmented, st.seen);
  }
}

TEST(Trainer, DivergenceStopsEarly) {
  auto corpus = small_corpus();
  TrainConfig c = small_config(TrainMode::vanilla);
  c.iterations = 50;
  c.divergence_factor = 1e-6;
  c.divergence_patience = 3;
  auto r = train(corpus.corpus, c, corpus.vocab.size());
  EXPECT_TRUE(r.stopped_early);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_TRUE(r.records.back().valid_nll_full.has_value());
}

TEST(Trainer, AdamAndSgdMetaStepsBothRun) {
  auto corpus = small_corpus();
  for (auto opt : {MetaOptimizer::sgd, MetaOptimizer::adam}) {
    TrainConfig c = small_config(TrainMode::manipulated);
    c.meta_optimizer = opt;
    c.augmenter_beta = -1.0;
    c.iterations = 2;
    Trainer t(corpus.corpus, c, corpus.vocab.size());
    const ParamSet before = t.net()->params().as_constants();
    while (!t.done()) EXPECT_FALSE(t.step().meta_skipped);
    const ParamSet& after = t.net()->params();
    bool core_moved = false, aug_moved = false;
    for (std::size_t i = 0; i < after.size(); ++i) {
      const bool moved = before[i].value() != after[i].value();
      (i < t.net()->core_size() ? core_moved : aug_moved) |= moved;
    }
    EXPECT_TRUE(core_moved);
    EXPECT_TRUE(aug_moved);
  }
}

TEST(Trainer, ZeroAugmenterStepFreezesAugmenters) {
  auto corpus = small_corpus();
  TrainConfig c = small_config(TrainMode::manipulated);
  c.augmenter_beta = 0.0;
  c.iterations = 2;
  Trainer t(corpus.corpus, c, corpus.vocab.size());
  const ParamSet before = t.net()->params().as_constants();
  while (!t.done()) t.step();
  for (std::size_t i = t.net()->core_size(); i < before.size(); ++i) {
    EXPECT_EQ(before[i].value(), t.net()->params()[i].value()) << before.name(i);
  }
}

TEST(Trainer, CheckpointRoundTripReproducesNextStep) {
  auto corpus = small_corpus();
  for (auto mode : {TrainMode::vanilla, TrainMode::manipulated}) {
    TrainConfig c = small_config(mode);
    Trainer t(corpus.corpus, c, corpus.vocab.size());
    for (int i = 0; i < 3; ++i) t.step();
    std::stringstream buf;
    write_checkpoint(make_checkpoint(t, &corpus.vocab), buf);
    const IterationRecord direct = t.step();

    Checkpoint loaded = read_checkpoint(buf);
    EXPECT_EQ(loaded.vocabulary, corpus.vocab.tokens());
    auto restored = restore_trainer(corpus.corpus, loaded, corpus.vocab.size());
    EXPECT_EQ(restored->iteration(), 3);
    const IterationRecord again = restored->step();
    EXPECT_NEAR(direct.l_dm, again.l_dm, 1e-7);
    EXPECT_NEAR(direct.valid_nll, again.valid_nll, 1e-7);
    EXPECT_EQ(direct.to_json(), again.to_json());
    for (std::size_t i = 0; i < t.theta().size(); ++i) {
      EXPECT_EQ(t.theta()[i].value(), restored->theta()[i].value());
    }
  }
}
