#include "datamanip/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "datamanip/checkpoint.hpp"
#include "datamanip/config.hpp"
#include "datamanip/inspect.hpp"
#include "datamanip/log.hpp"
#include "datamanip/metrics.hpp"
#include "datamanip/rng.hpp"

namespace datamanip {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad invocation or configuration; maps to kExitUsage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kLabelsFile = "labels.tsv";
constexpr const char* kEmbeddingsFile = "embeddings.txt";

ConfigField text_field(std::string key, std::string help, std::string& target) {
  return {std::move(key), std::move(help), [&target] { return target; },
          [&target](std::string_view v) { target = std::string(v); }};
}

ConfigField flag_field(std::string key, std::string help, bool& target) {
  return {std::move(key), std::move(help), [&target] { return std::string(target ? "true" : "false"); },
          [key, &target](std::string_view v) {
            if (v == "true" || v == "1") target = true;
            else if (v == "false" || v == "0") target = false;
            else throw std::invalid_argument(key + ": expected true or false, got '" + std::string(v) + "'");
          }};
}

std::string flag_name(std::string_view key) {
  std::string s = "--";
  for (char c : key) s += c == '_' ? '-' : c;
  return s;
}

// One option per config field, plus --config. Values are kept as text and
// applied through the field table after parsing.
class FieldOptions {
 public:
  FieldOptions(CLI::App& app, std::vector<ConfigField> fields,
               const std::map<std::string, std::string>& aliases = {})
      : fields_(std::move(fields)) {
    app.add_option("--config", config_path_, "key = value file; flags override it");
    for (const auto& f : fields_) {
      std::string names = flag_name(f.key);
      if (auto it = aliases.find(f.key); it != aliases.end()) names += "," + it->second;
      const std::string current = f.get();
      CLI::Option* opt = app.add_option(names, values_[f.key], f.help + " [" + current + "]");
      // Boolean keys also work as bare flags.
      if (current == "true" || current == "false") opt->expected(0, 1);
      options_[f.key] = opt;
    }
  }

  // Defaults, then the config file, then flags.
  void resolve() {
    KeyValues merged;
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw UsageError("cannot read config file " + config_path_);
      try {
        merged = parse_key_values(in);
      } catch (const std::invalid_argument& e) {
        throw UsageError(config_path_ + ": " + e.what());
      }
    }
    for (const auto& [key, opt] : options_) {
      if (opt->count() > 0) merged[key] = values_[key].empty() ? "true" : values_[key];
    }
    resolved_ = merged;
    try {
      apply_key_values(fields_, merged);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }

  const KeyValues& given() const { return resolved_; }
  KeyValues echo() const { return to_key_values(fields_); }

 private:
  std::vector<ConfigField> fields_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
  std::string config_path_;
  KeyValues resolved_;
};

template <typename F>
void validated(F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// A fresh output directory, or an existing one when forced.
void prepare_output(const fs::path& dir, bool force) {
  if (dir.empty()) throw UsageError("--out is required");
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw std::runtime_error(dir.string() + " exists and is not a directory");
  }
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw std::runtime_error(dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string pair_key(const DialoguePair& p, const Vocabulary& vocab) {
  return detokenize(vocab.decode(p.query)) + '\t' + detokenize(vocab.decode(p.response));
}

// Sidecar rows: split, query, response, clean|noisy. Keyed by the pair text.
std::map<std::string, bool> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read labels " + path.string());
  std::map<std::string, bool> noisy;
  std::string line;
  std::getline(in, line);  // header
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    if (cols.size() != 4 || (cols[3] != "clean" && cols[3] != "noisy")) {
      throw std::runtime_error(path.string() + ":" + std::to_string(number) + ": malformed label row");
    }
    if (cols[0] == "train") noisy[cols[1] + '\t' + cols[2]] = cols[3] == "noisy";
  }
  return noisy;
}

fs::path corpus_dir(const fs::path& corpus) {
  return fs::is_directory(corpus) ? corpus : corpus.parent_path();
}

// Explicit path, or the named file beside the corpus when it exists.
fs::path beside_corpus(const std::string& explicit_path, const fs::path& corpus, const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  if (corpus.empty()) return {};
  const fs::path p = corpus_dir(corpus) / name;
  return fs::exists(p) ? p : fs::path{};
}

// ---------------------------------------------------------------------------
// synth

struct SynthCommand {
  CorpusSpec spec;
  int embedding_dim = 32;
  std::string out;
  bool force = false;
  std::unique_ptr<FieldOptions> options;

  void attach(CLI::App& app) {
    auto fields = corpus_spec_fields(spec);
    fields.push_back({"embedding_dim", "dimension of the random word vectors written beside the corpus; 0 skips them",
                      [this] { return std::to_string(embedding_dim); },
                      [this](std::string_view v) {
                        try {
                          std::size_t used = 0;
                          embedding_dim = std::stoi(std::string(v), &used);
                          if (used != v.size()) throw std::invalid_argument("");
                        } catch (const std::exception&) {
                          throw std::invalid_argument("embedding_dim: not an integer: '" + std::string(v) + "'");
                        }
                      }});
    options = std::make_unique<FieldOptions>(app, std::move(fields),
                                             std::map<std::string, std::string>{{"corpus_seed", "--seed"}});
    app.add_option("--out", out, "output directory")->required();
    app.add_flag("--force", force, "overwrite a non-empty output directory");
  }

  int run(std::ostream& out_stream) {
    options->resolve();
    validated([&] {
      spec.validate();
      if (embedding_dim < 0) throw std::invalid_argument("embedding_dim must be >= 0");
    });
    const fs::path dir = out;
    prepare_output(dir, force);
    const SyntheticCorpus syn = make_synthetic_corpus(spec);
    write_split(dir / "train.tsv", syn.corpus.train, syn.vocab);
    write_split(dir / "valid.tsv", syn.corpus.valid, syn.vocab);
    write_split(dir / "test.tsv", syn.corpus.test, syn.vocab);
    auto labels = open_out(dir / kLabelsFile);
    labels << "split\tquery\tresponse\tlabel\n";
    const std::pair<const char*, const std::vector<DialoguePair>*> splits[] = {
        {"train", &syn.corpus.train}, {"valid", &syn.corpus.valid}, {"test", &syn.corpus.test}};
    for (const auto& [name, pairs] : splits) {
      for (const auto& p : *pairs) {
        labels << name << '\t' << pair_key(p, syn.vocab) << '\t' << (syn.is_noisy(p.id) ? "noisy" : "clean")
               << '\n';
      }
    }
    if (embedding_dim > 0) {
      write_embeddings(dir / kEmbeddingsFile,
                       random_embeddings(syn.vocab, embedding_dim, derive_seed(spec.seed, "embeddings")),
                       syn.vocab);
    }
    write_text(dir / "synth.cfg", format_key_values(options->echo()));
    out_stream << "wrote " << syn.corpus.train.size() << '/' << syn.corpus.valid.size() << '/'
               << syn.corpus.test.size() << " pairs to " << dir.string() << '\n';
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// train

void apply_preset(TrainConfig& cfg, const std::string& preset) {
  if (preset == "custom") return;
  if (preset == "desk") cfg.model = ModelDims::desk(cfg.arch);
  else if (preset == "paper") cfg.model = ModelDims::paper(cfg.arch);
  else throw std::invalid_argument("preset: expected custom, desk or paper, got '" + preset + "'");
}

struct TrainCommand {
  TrainConfig config;
  std::string corpus, labels, preset = "custom";
  std::string out;
  bool force = false;
  std::unique_ptr<FieldOptions> options;

  void attach(CLI::App& app) {
    std::vector<ConfigField> fields{
        text_field("corpus", "corpus directory (train/valid/test.tsv) or a single training file", corpus),
        text_field("labels", "clean/noisy sidecar for the report statistics; defaults to labels.tsv beside the corpus",
                   labels),
        text_field("preset", "model sizes: custom keeps the per-key values, desk or paper replace them", preset)};
    for (auto& f : train_config_fields(config)) fields.push_back(std::move(f));
    options = std::make_unique<FieldOptions>(app, std::move(fields));
    app.add_option("--out", out, "output directory")->required();
    app.add_flag("--force", force, "overwrite a non-empty output directory");
  }

  // The preset replaces the model sizes before any explicit size key applies.
  void resolve() {
    options->resolve();
    const KeyValues& given = options->given();
    validated([&] {
      apply_preset(config, preset);
      if (preset != "custom") {
        KeyValues rest = given;
        for (auto key : {"corpus", "labels", "preset"}) rest.erase(std::string(key));
        std::vector<ConfigField> fields = train_config_fields(config);
        apply_key_values(fields, rest);
      }
      config.validate();
    });
    if (corpus.empty()) throw UsageError("--corpus is required");
    if (!fs::exists(corpus)) throw UsageError("corpus not found: " + corpus);
  }

  int run(std::ostream& out_stream) {
    resolve();
    const fs::path dir = out;
    prepare_output(dir, force);
    const fs::path labels_path = beside_corpus(labels, corpus, kLabelsFile);
    // Pin the resolved preset so the echo reproduces the run by itself.
    KeyValues echo = options->echo();
    echo["preset"] = "custom";
    echo["labels"] = labels_path.string();
    write_text(dir / "run.cfg", format_key_values(echo));

    const LoadedCorpus loaded = load_corpus(corpus, nullptr, config.model.max_len);
    if (loaded.corpus.valid.empty()) throw std::runtime_error("corpus has no validation split");
    TrainHooks hooks;
    hooks.vocab = &loaded.vocab;
    if (!labels_path.empty()) {
      const auto noisy = read_labels(labels_path);
      for (const auto& p : loaded.corpus.train) {
        auto it = noisy.find(pair_key(p, loaded.vocab));
        if (it != noisy.end() && it->second) hooks.noisy_ids.insert(p.id);
      }
    }
    auto report = open_out(dir / "report.jsonl");
    auto augmentation = open_out(dir / "augmentation.tsv");
    auto weights = open_out(dir / "weights.tsv");
    auto timing = open_out(dir / "timing.tsv");
    hooks.logs = {&report, &augmentation, &weights, &timing};
    if (config.checkpoint_interval > 0) {
      fs::create_directories(dir / "checkpoints");
      hooks.checkpoint = [&](const Trainer& t) {
        std::ostringstream name;
        name << "iter-" << std::setw(6) << std::setfill('0') << t.iteration() << ".json";
        save_checkpoint(make_checkpoint(t, &loaded.vocab), dir / "checkpoints" / name.str());
      };
    }

    Trainer trainer(loaded.corpus, config, loaded.vocab.size());
    Trainer::write_log_headers(hooks.logs);
    const TrainResult result = datamanip::run(trainer, hooks);
    save_checkpoint(make_checkpoint(trainer, &loaded.vocab), dir / "final.json");

    auto instances = open_out(dir / "instances.tsv");
    instances << "id\tquery\tresponse\tseen\taugmented\tlast_weight\n";
    for (const auto& p : loaded.corpus.train) {
      InstanceStat s;
      if (auto it = result.instances.find(p.id); it != result.instances.end()) s = it->second;
      instances << p.id << '\t' << pair_key(p, loaded.vocab) << '\t' << s.seen << '\t' << s.augmented << '\t'
                << format_double(s.last_weight) << '\n';
    }
    json summary{{"mode", train_mode_name(config.mode)},
                 {"iterations", trainer.iteration()},
                 {"final_valid_nll", result.final_valid_nll},
                 {"stopped_early", result.stopped_early},
                 {"train_pairs", loaded.corpus.train.size()},
                 {"noisy_train_pairs", hooks.noisy_ids.size()}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    out_stream << train_mode_name(config.mode) << ": " << trainer.iteration()
               << " iterations, final validation NLL " << result.final_valid_nll
               << (result.stopped_early ? " (stopped early)" : "") << '\n';
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// eval

struct EvalCommand {
  std::string checkpoint, corpus, embeddings, split = "test", hypotheses;
  bool references = false;
  std::string out;
  bool force = false;
  std::unique_ptr<FieldOptions> options;

  void attach(CLI::App& app) {
    std::vector<ConfigField> fields{
        text_field("checkpoint", "checkpoint written by train", checkpoint),
        text_field("corpus", "corpus the checkpoint was trained on", corpus),
        text_field("embeddings", "word vectors in GloVe text format; defaults to embeddings.txt beside the corpus",
                   embeddings),
        text_field("split", "split to decode: test or valid", split),
        flag_field("references", "score the reference responses against themselves instead of decoding",
                   references)};
    options = std::make_unique<FieldOptions>(app, std::move(fields));
    app.add_option("--out", out, "output directory")->required();
    app.add_flag("--force", force, "overwrite a non-empty output directory");
  }

  int run(std::ostream& out_stream) {
    options->resolve();
    if (checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (corpus.empty()) throw UsageError("--corpus is required");
    if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
    if (!fs::exists(corpus)) throw UsageError("corpus not found: " + corpus);
    if (split != "test" && split != "valid") throw UsageError("split: expected test or valid, got '" + split + "'");
    const fs::path emb_path = beside_corpus(embeddings, corpus, kEmbeddingsFile);
    if (emb_path.empty()) throw UsageError("--embeddings is required (no embeddings.txt beside the corpus)");
    const fs::path dir = out;
    prepare_output(dir, force);
    KeyValues echo = options->echo();
    echo["embeddings"] = emb_path.string();
    write_text(dir / "eval.cfg", format_key_values(echo));

    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const TrainConfig cfg = ckpt.train_config();
    const LoadedCorpus loaded = load_corpus(corpus, nullptr, cfg.model.max_len);
    if (ckpt.vocabulary.empty()) {
      warn("checkpoint carries no vocabulary; assuming it matches the corpus");
    } else if (ckpt.vocabulary != loaded.vocab.tokens()) {
      throw std::runtime_error("vocabulary mismatch: checkpoint has " + std::to_string(ckpt.vocabulary.size()) +
                               " tokens, corpus " + std::to_string(loaded.vocab.size()) +
                               "; evaluate against the corpus the model was trained on");
    }
    const auto& pairs = split == "test" ? loaded.corpus.test : loaded.corpus.valid;
    if (pairs.empty()) throw std::runtime_error("corpus has no " + split + " split");

    const BuiltModel built = restore_model(ckpt, loaded.vocab.size());
    DecodeConfig decode;
    decode.max_len = cfg.model.max_len;
    std::vector<metrics::Sentence> hyps, refs;
    for (const auto& p : pairs) {
      refs.push_back(p.response);
      hyps.push_back(references ? p.response : built.model->generate(built.params, p.query, decode));
    }
    std::vector<metrics::Sentence> train_responses;
    for (const auto& p : loaded.corpus.train) train_responses.push_back(p.response);
    const auto ngrams = metrics::NgramModel::fit(train_responses);
    const auto unigram = unigram_probabilities(loaded.corpus.train, loaded.vocab.size());
    const Eigen::MatrixXd table = load_embeddings(emb_path, loaded.vocab);
    const metrics::MetricReport report = metrics::evaluate(hyps, refs, ngrams, table, unigram);

    auto generated = open_out(dir / "responses.tsv");
    generated << "query\treference\tresponse\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      generated << detokenize(loaded.vocab.decode(pairs[i].query)) << '\t'
                << detokenize(loaded.vocab.decode(refs[i])) << '\t'
                << detokenize(loaded.vocab.decode(hyps[i])) << '\n';
    }
    write_text(dir / "metrics.json", report.to_json().dump(2) + "\n");
    out_stream << report.to_table();
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// inspect

struct InstanceRow {
  std::int64_t id = 0;
  std::string query, response;
  int seen = 0;
  int augmented = 0;
  double weight = 0.0;
  double frequency() const { return seen > 0 ? static_cast<double>(augmented) / seen : 0.0; }
};

std::vector<InstanceRow> read_instances(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<InstanceRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    if (cols.size() != 6) throw std::runtime_error(path.string() + ": malformed row");
    rows.push_back({std::stoll(cols[0]), cols[1], cols[2], std::stoi(cols[3]), std::stoi(cols[4]),
                    std::stod(cols[5])});
  }
  return rows;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct InspectCommand {
  std::string run_dir, labels, embeddings;
  std::string out;
  std::unique_ptr<FieldOptions> options;

  void attach(CLI::App& app) {
    std::vector<ConfigField> fields{
        text_field("run", "output directory of a train command", run_dir),
        text_field("labels", "clean/noisy sidecar; defaults to the one recorded in the run", labels),
        text_field("embeddings", "word vectors for query relatedness; defaults to embeddings.txt beside the corpus",
                   embeddings)};
    options = std::make_unique<FieldOptions>(app, std::move(fields));
    app.add_option("--out", out, "directory for inspect.tsv and inspect.json; defaults to the run directory");
  }

  int run(std::ostream& out_stream) {
    options->resolve();
    if (run_dir.empty()) throw UsageError("--run is required");
    const fs::path dir = run_dir;
    if (!fs::exists(dir / "report.jsonl")) {
      throw std::runtime_error("no training report in " + dir.string());
    }
    KeyValues run_cfg;
    if (std::ifstream in(dir / "run.cfg"); in) run_cfg = parse_key_values(in);
    const fs::path corpus = run_cfg.count("corpus") ? fs::path(run_cfg.at("corpus")) : fs::path{};
    fs::path labels_path = labels;
    if (labels_path.empty() && run_cfg.count("labels")) labels_path = run_cfg.at("labels");
    const fs::path emb_path = beside_corpus(embeddings, corpus, kEmbeddingsFile);

    long decisions = 0;
    int iterations = 0;
    {
      std::ifstream in(dir / "report.jsonl");
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        decisions += rec.at("n_augmented").get<long>();
        ++iterations;
      }
    }
    std::vector<InstanceRow> rows = read_instances(dir / "instances.tsv");
    std::stable_sort(rows.begin(), rows.end(), [](const InstanceRow& a, const InstanceRow& b) {
      if (a.frequency() != b.frequency()) return a.frequency() > b.frequency();
      return a.weight > b.weight;
    });
    long augmented = 0;
    for (const auto& r : rows) augmented += r.augmented;
    if (augmented != decisions) {
      warn("instance augmentation counts (" + std::to_string(augmented) + ") differ from the report (" +
           std::to_string(decisions) + ")");
    }

    json summary{{"iterations", iterations},
                 {"instances", rows.size()},
                 {"augment_decisions", decisions},
                 {"instance_augmentations", augmented}};
    std::vector<std::optional<bool>> noisy(rows.size());
    if (!labels_path.empty() && fs::exists(labels_path)) {
      const auto table = read_labels(labels_path);
      std::vector<double> clean_w, noisy_w, clean_f, noisy_f;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        auto it = table.find(rows[i].query + '\t' + rows[i].response);
        if (it == table.end() || rows[i].seen == 0) continue;
        noisy[i] = it->second;
        (it->second ? noisy_w : clean_w).push_back(rows[i].weight);
        (it->second ? noisy_f : clean_f).push_back(rows[i].frequency());
      }
      summary["clean"] = {{"count", clean_w.size()},
                          {"mean_weight", number_or_null(mean_of(clean_w))},
                          {"mean_frequency", number_or_null(mean_of(clean_f))}};
      summary["noisy"] = {{"count", noisy_w.size()},
                          {"mean_weight", number_or_null(mean_of(noisy_w))},
                          {"mean_frequency", number_or_null(mean_of(noisy_f))}};
      if (!clean_w.empty() && !noisy_w.empty()) summary["auc"] = noise_detection_auc(clean_w, noisy_w);
    }
    std::vector<double> relatedness;
    if (!emb_path.empty() && !run_cfg.empty()) {
      const Checkpoint ckpt = load_checkpoint(dir / "final.json");
      const Vocabulary vocab = Vocabulary::from_tokens(ckpt.vocabulary);
      std::vector<DialoguePair> pairs;
      for (const auto& r : rows) {
        DialoguePair p;
        p.query = vocab.encode(tokenize(r.query));
        p.response = vocab.encode(tokenize(r.response));
        pairs.push_back(std::move(p));
      }
      const auto unigram = unigram_probabilities(pairs, vocab.size());
      const Eigen::MatrixXd table = load_embeddings(emb_path, vocab);
      std::vector<double> freq;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        relatedness.push_back(query_relatedness(pairs[i], table, unigram));
        freq.push_back(rows[i].frequency());
      }
      if (rows.size() >= 2) {
        const DecileContrast d = decile_contrast(freq, relatedness);
        summary["relatedness_deciles"] = {{"group_size", d.group_size},
                                          {"top_mean", d.top_mean},
                                          {"bottom_mean", d.bottom_mean},
                                          {"top_frequency_min", d.top_key_min},
                                          {"bottom_frequency_max", d.bottom_key_max}};
      }
    }

    const fs::path target = out.empty() ? dir : fs::path(out);
    fs::create_directories(target);
    auto table = open_out(target / "inspect.tsv");
    table << "id\tfrequency\tweight\tseen\taugmented\tlabel\trelatedness\tquery\tresponse\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      table << r.id << '\t' << format_double(r.frequency()) << '\t' << format_double(r.weight) << '\t' << r.seen
            << '\t' << r.augmented << '\t' << (noisy[i] ? (*noisy[i] ? "noisy" : "clean") : "-") << '\t'
            << (relatedness.empty() ? std::string("-") : format_double(relatedness[i])) << '\t' << r.query << '\t'
            << r.response << '\n';
    }
    write_text(target / "inspect.json", summary.dump(2) + "\n");
    out_stream << summary.dump(2) << '\n';
    return kExitOk;
  }
};

std::vector<char*> argv_of(std::vector<std::string>& storage) {
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return argv;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint learning of a dialogue model and a data manipulation network", "datamanip"};
  app.require_subcommand(1);
  SynthCommand synth;
  TrainCommand train_cmd;
  EvalCommand eval;
  InspectCommand inspect;
  CLI::App* synth_app = app.add_subcommand("synth", "write a synthetic corpus with label noise");
  CLI::App* train_app = app.add_subcommand("train", "train in vanilla or manipulated mode");
  CLI::App* eval_app = app.add_subcommand("eval", "decode a split greedily and compute the metrics");
  CLI::App* inspect_app = app.add_subcommand("inspect", "per-instance augmentation frequency and weight");
  synth.attach(*synth_app);
  train_cmd.attach(*train_app);
  eval.attach(*eval_app);
  inspect.attach(*inspect_app);

  std::vector<std::string> storage{"datamanip"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv = argv_of(storage);
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (!app.get_subcommands().empty()) {
      err << "run '" << app.get_subcommands().front()->get_name() << " --help' for usage\n";
    }
    return kExitUsage;
  }

  try {
    if (synth_app->parsed()) return synth.run(out);
    if (train_app->parsed()) return train_cmd.run(out);
    if (eval_app->parsed()) return eval.run(out);
    return inspect.run(out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace datamanip
