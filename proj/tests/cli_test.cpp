#include "datamanip/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "datamanip/config.hpp"
#include "datamanip/log.hpp"

using namespace datamanip;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Small sizes so a training command finishes in well under a second.
constexpr const char* kSmallRun = R"(# small
embedding = 8
hidden = 8
ff_hidden = 16
heads = 1
encoder_dim = 8
encoder_heads = 2
encoder_ff = 16
scorer_hidden = 8
mlm_dim = 8
mlm_heads = 2
mlm_ff = 16
translator_embedding = 8
translator_hidden = 8
translate_max_len = 6
mlm_pretrain_steps = 3
translator_pretrain_steps = 3
pretrain_batch = 4
train_batch = 4
valid_batch = 6
iterations = 6
seed = 3
)";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("datamanip-cli-") + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
    write(root_ / "small.cfg", kSmallRun);
    previous_ = set_warning_sink([](const std::string&) {});
  }
  void TearDown() override {
    set_warning_sink(previous_);
    fs::remove_all(root_);
  }

  int cli(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }
  static void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }
  std::string path(const char* name) const { return (root_ / name).string(); }

  int synth_small(const char* name, const char* noise = "0.3") {
    return cli({"synth", "--n-pairs", "60", "--noise-rate", noise, "--seed", "7", "--out", path(name)});
  }
  int train_small(const char* corpus, const char* out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--config", path("small.cfg"), "--corpus", path(corpus), "--out", path(out)};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  }

  fs::path root_;
  std::ostringstream out_, err_;
  WarningSink previous_;
};

}  // namespace

TEST_F(Cli, SynthWritesEightOneOneSplitAndLabels) {
  ASSERT_EQ(cli({"synth", "--n-pairs", "1000", "--noise-rate", "0.3", "--seed", "7", "--out", path("c")}), kExitOk)
      << err_.str();
  EXPECT_EQ(line_count(root_ / "c" / "train.tsv"), 800u);
  EXPECT_EQ(line_count(root_ / "c" / "valid.tsv"), 100u);
  EXPECT_EQ(line_count(root_ / "c" / "test.tsv"), 100u);
  EXPECT_EQ(line_count(root_ / "c" / "labels.tsv"), 1001u);
  EXPECT_TRUE(fs::exists(root_ / "c" / "embeddings.txt"));
  std::ifstream echo(root_ / "c" / "synth.cfg");
  const KeyValues kv = parse_key_values(echo);
  EXPECT_EQ(kv.at("n_pairs"), "1000");
  EXPECT_EQ(kv.at("corpus_seed"), "7");
}

TEST_F(Cli, SynthRerunIsByteIdentical) {
  ASSERT_EQ(synth_small("a"), kExitOk);
  ASSERT_EQ(synth_small("b"), kExitOk);
  for (const char* f : {"train.tsv", "valid.tsv", "test.tsv", "labels.tsv", "embeddings.txt", "synth.cfg"}) {
    EXPECT_EQ(slurp(root_ / "a" / f), slurp(root_ / "b" / f)) << f;
  }
}

TEST_F(Cli, SynthRefusesExistingOutputUnlessForced) {
  ASSERT_EQ(synth_small("a"), kExitOk);
  EXPECT_EQ(synth_small("a"), kExitFailure);
  EXPECT_NE(err_.str().find("--force"), std::string::npos);
  EXPECT_EQ(cli({"synth", "--n-pairs", "60", "--out", path("a"), "--force"}), kExitOk);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({"synth", "--noise-rate", "1.5", "--out", path("x")}), kExitUsage);
  EXPECT_NE(err_.str().find("noise_rate"), std::string::npos);
  EXPECT_FALSE(fs::exists(root_ / "x"));
  EXPECT_EQ(cli({}), kExitUsage);
  EXPECT_EQ(cli({"fly"}), kExitUsage);
  EXPECT_EQ(cli({"synth", "--n-pears", "5", "--out", path("x")}), kExitUsage);
  EXPECT_EQ(cli({"synth", "--n-pairs", "many", "--out", path("x")}), kExitUsage);
  EXPECT_EQ(cli({"train", "--out", path("t")}), kExitUsage);
  EXPECT_NE(err_.str().find("--corpus"), std::string::npos);
  EXPECT_EQ(cli({"train", "--corpus", path("missing"), "--out", path("t")}), kExitUsage);
  EXPECT_NE(err_.str().find("corpus not found"), std::string::npos);
  EXPECT_EQ(cli({"train", "--corpus", path("missing"), "--out", path("t"), "--preset", "huge"}), kExitUsage);
  write(root_ / "bad.cfg", "alpha 0.1\n");
  EXPECT_EQ(cli({"train", "--config", path("bad.cfg"), "--corpus", path("missing"), "--out", path("t")}), kExitUsage);
  EXPECT_EQ(cli({"--help"}), kExitOk);
}

TEST_F(Cli, FlagsOverrideConfigFileAndEchoReproduces) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "t", {"--alpha", "0.25", "--mode", "vanilla"}), kExitOk) << err_.str();
  std::ifstream in(root_ / "t" / "run.cfg");
  const KeyValues echo = parse_key_values(in);
  EXPECT_EQ(echo.at("alpha"), "0.25");
  EXPECT_EQ(echo.at("hidden"), "8");
  EXPECT_EQ(echo.at("mode"), "vanilla");
  EXPECT_EQ(echo.at("corpus"), path("c"));
  // The echo alone reproduces the run.
  ASSERT_EQ(cli({"train", "--config", (root_ / "t" / "run.cfg").string(), "--out", path("t2")}), kExitOk)
      << err_.str();
  EXPECT_EQ(slurp(root_ / "t" / "report.jsonl"), slurp(root_ / "t2" / "report.jsonl"));
  EXPECT_EQ(slurp(root_ / "t" / "run.cfg"), slurp(root_ / "t2" / "run.cfg"));
}

TEST_F(Cli, PresetReplacesModelSizesBeforeExplicitKeys) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "t", {"--preset", "desk", "--hidden", "12", "--iterations", "1", "--mode", "vanilla"}),
            kExitOk)
      << err_.str();
  std::ifstream in(root_ / "t" / "run.cfg");
  const KeyValues echo = parse_key_values(in);
  EXPECT_EQ(echo.at("preset"), "custom");
  EXPECT_EQ(echo.at("hidden"), "12");
  // Set in the config file, so it beats the preset.
  EXPECT_EQ(echo.at("embedding"), "8");
  // Left unset, so it comes from the preset.
  EXPECT_EQ(echo.at("layers"), std::to_string(ModelDims::desk(Architecture::seq2seq).layers));
  EXPECT_NE(ModelDims::desk(Architecture::seq2seq).layers, TrainConfig{}.model.layers);
}

TEST_F(Cli, TrainBothModesGiveComparableReports) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "v", {"--mode", "vanilla"}), kExitOk) << err_.str();
  ASSERT_EQ(train_small("c", "m", {"--mode", "manipulated"}), kExitOk) << err_.str();
  for (const char* run : {"v", "m"}) {
    const fs::path dir = root_ / run;
    for (const char* f : {"report.jsonl", "final.json", "instances.tsv", "summary.json", "run.cfg"}) {
      EXPECT_TRUE(fs::exists(dir / f)) << run << "/" << f;
    }
    EXPECT_EQ(line_count(dir / "report.jsonl"), 6u);
    const json summary = json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(summary.at("iterations"), 6);
    EXPECT_TRUE(std::isfinite(summary.at("final_valid_nll").get<double>()));
    EXPECT_GT(summary.at("noisy_train_pairs").get<int>(), 0);
  }
}

TEST_F(Cli, MetaPeriodTwoUpdatesOnEvenIterationsOnly) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "m", {"--meta-period", "2"}), kExitOk) << err_.str();
  std::ifstream in(root_ / "m" / "report.jsonl");
  int n = 0;
  for (std::string line; std::getline(in, line);) {
    const json rec = json::parse(line);
    EXPECT_EQ(rec.at("meta").get<bool>(), rec.at("iteration").get<int>() % 2 == 0) << line;
    ++n;
  }
  EXPECT_EQ(n, 6);
}

TEST_F(Cli, TrainWritesPeriodicCheckpoints) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "m", {"--checkpoint-interval", "3"}), kExitOk) << err_.str();
  EXPECT_TRUE(fs::exists(root_ / "m" / "checkpoints" / "iter-000003.json"));
  EXPECT_TRUE(fs::exists(root_ / "m" / "checkpoints" / "iter-000006.json"));
  EXPECT_EQ(slurp(root_ / "m" / "checkpoints" / "iter-000006.json"), slurp(root_ / "m" / "final.json"));
}

TEST_F(Cli, EvalReferencesScoreOneHundred) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "t", {"--mode", "vanilla", "--iterations", "1"}), kExitOk);
  ASSERT_EQ(cli({"eval", "--checkpoint", path("t/final.json"), "--corpus", path("c"), "--references", "--out",
                 path("e")}),
            kExitOk)
      << err_.str();
  const json m = json::parse(slurp(root_ / "e" / "metrics.json"));
  for (const char* key : {"bleu", "emb_avg", "emb_ext", "emb_gre"}) {
    EXPECT_NEAR(m.at(key).get<double>(), 100.0, 1e-6) << key;
  }
}

TEST_F(Cli, EvalIsDeterministicAndReportsAllMetrics) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "t"), kExitOk);
  const std::vector<std::string> base{"eval", "--checkpoint", path("t/final.json"), "--corpus", path("c")};
  auto with_out = [&](const char* o) {
    auto a = base;
    a.insert(a.end(), {"--out", path(o)});
    return a;
  };
  ASSERT_EQ(cli(with_out("e1")), kExitOk) << err_.str();
  ASSERT_EQ(cli(with_out("e2")), kExitOk);
  EXPECT_EQ(slurp(root_ / "e1" / "metrics.json"), slurp(root_ / "e2" / "metrics.json"));
  EXPECT_EQ(slurp(root_ / "e1" / "responses.tsv"), slurp(root_ / "e2" / "responses.tsv"));
  const json m = json::parse(slurp(root_ / "e1" / "metrics.json"));
  int named = 0;
  for (const char* key : {"dist_1", "dist_2", "dist_3", "intra_1", "intra_2", "intra_3", "ent_1", "ent_2", "ent_3",
                          "bleu", "emb_avg", "emb_ext", "emb_gre"}) {
    EXPECT_TRUE(m.contains(key)) << key;
    named += m.contains(key) ? 1 : 0;
  }
  EXPECT_EQ(named, 13);
}

TEST_F(Cli, EvalRejectsVocabularyMismatch) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(cli({"synth", "--n-pairs", "60", "--vocab-size", "30", "--out", path("other")}), kExitOk);
  ASSERT_EQ(train_small("c", "t", {"--mode", "vanilla", "--iterations", "1"}), kExitOk);
  EXPECT_EQ(cli({"eval", "--checkpoint", path("t/final.json"), "--corpus", path("other"), "--out", path("e")}),
            kExitFailure);
  EXPECT_NE(err_.str().find("vocabulary mismatch"), std::string::npos);
}

TEST_F(Cli, InspectBookkeepingAndAuc) {
  ASSERT_EQ(synth_small("c"), kExitOk);
  ASSERT_EQ(train_small("c", "m"), kExitOk) << err_.str();
  ASSERT_EQ(cli({"inspect", "--run", path("m")}), kExitOk) << err_.str();
  const json s = json::parse(slurp(root_ / "m" / "inspect.json"));
  long report_total = 0;
  std::ifstream rep(root_ / "m" / "report.jsonl");
  for (std::string line; std::getline(rep, line);) report_total += json::parse(line).at("n_augmented").get<long>();
  EXPECT_GT(report_total, 0);
  EXPECT_EQ(s.at("augment_decisions").get<long>(), report_total);
  EXPECT_EQ(s.at("instance_augmentations").get<long>(), report_total);
  ASSERT_TRUE(s.contains("auc"));
  EXPECT_GE(s.at("auc").get<double>(), 0.0);
  EXPECT_LE(s.at("auc").get<double>(), 1.0);
  EXPECT_TRUE(s.contains("relatedness_deciles"));

  // Sorted by frequency, descending.
  std::ifstream table(root_ / "m" / "inspect.tsv");
  std::string line;
  std::getline(table, line);
  double previous = 2.0;
  long summed = 0;
  while (std::getline(table, line)) {
    std::stringstream ss(line);
    std::string id, freq, weight, seen, augmented;
    std::getline(ss, id, '\t');
    std::getline(ss, freq, '\t');
    std::getline(ss, weight, '\t');
    std::getline(ss, seen, '\t');
    std::getline(ss, augmented, '\t');
    EXPECT_LE(std::stod(freq), previous);
    previous = std::stod(freq);
    summed += std::stol(augmented);
  }
  EXPECT_EQ(summed, report_total);
}

TEST_F(Cli, InspectWithoutReportFails) {
  fs::create_directories(root_ / "empty");
  EXPECT_EQ(cli({"inspect", "--run", path("empty")}), kExitFailure);
  EXPECT_NE(err_.str().find("no training report"), std::string::npos);
}
