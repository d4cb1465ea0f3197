#include "datamanip/config.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

namespace datamanip {

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view text) {
  T value{};
  const std::string t = trim(text);
  auto res = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw std::invalid_argument("not a number: '" + t + "'");
  }
  return value;
}

bool parse_bool(std::string_view text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw std::invalid_argument("not a boolean: '" + t + "'");
}

class Binder {
 public:
  explicit Binder(std::vector<ConfigField>& out) : out_(out) {}

  void num(std::string key, int& f, std::string help) {
    add(std::move(key), std::move(help), [&f] { return std::to_string(f); },
        [&f](std::string_view v) { f = parse_number<int>(v); });
  }
  void num(std::string key, std::uint64_t& f, std::string help) {
    add(std::move(key), std::move(help), [&f] { return std::to_string(f); },
        [&f](std::string_view v) { f = parse_number<std::uint64_t>(v); });
  }
  void num(std::string key, double& f, std::string help) {
    add(std::move(key), std::move(help), [&f] { return format_double(f); },
        [&f](std::string_view v) { f = parse_number<double>(v); });
  }
  void flag(std::string key, bool& f, std::string help) {
    add(std::move(key), std::move(help), [&f] { return std::string(f ? "true" : "false"); },
        [&f](std::string_view v) { f = parse_bool(v); });
  }
  template <typename E, typename Name, typename Parse>
  void choice(std::string key, E& f, Name name, Parse parse, std::string help) {
    add(std::move(key), std::move(help), [&f, name] { return std::string(name(f)); },
        [&f, parse](std::string_view v) { f = parse(trim(v)); });
  }

 private:
  void add(std::string key, std::string help, std::function<std::string()> get,
           std::function<void(std::string_view)> set) {
    out_.push_back({std::move(key), std::move(help), std::move(get), std::move(set)});
  }
  std::vector<ConfigField>& out_;
};

}  // namespace

std::vector<ConfigField> train_config_fields(TrainConfig& c) {
  std::vector<ConfigField> out;
  Binder b(out);
  b.choice("mode", c.mode, train_mode_name, parse_train_mode, "vanilla | manipulated");
  b.choice("arch", c.arch, architecture_name, parse_architecture, "seq2seq | transformer");
  b.num("embedding", c.model.embedding, "dialogue model embedding size");
  b.num("hidden", c.model.hidden, "dialogue model hidden size");
  b.num("layers", c.model.layers, "recurrent layers or transformer blocks");
  b.num("heads", c.model.heads, "transformer attention heads");
  b.num("ff_hidden", c.model.ff_hidden, "transformer feed-forward size");
  b.num("max_len", c.model.max_len, "longest generated response");
  b.flag("length_normalize", c.model.length_normalize, "divide each NLL by its target length");

  b.num("alpha", c.alpha, "inner step size");
  b.num("beta", c.beta, "meta step size");
  b.choice("meta_optimizer", c.meta_optimizer, meta_optimizer_name, parse_meta_optimizer,
           "sgd | adam (encoder, gate and scorer)");
  b.num("augmenter_beta", c.augmenter_beta, "SGD step for MLM and translators; < 0 means beta");
  b.num("train_batch", c.train_batch, "training batch size");
  b.num("valid_batch", c.valid_batch, "validation batch size for meta steps");
  b.num("iterations", c.iterations, "training iterations");
  b.num("meta_period", c.meta_period, "meta step every k iterations");
  b.num("tau", c.tau, "gumbel-softmax temperature");
  b.num("tau_final", c.tau_final, "temperature at the last iteration (linear anneal)");
  b.num("seed", c.seed, "root seed");
  b.num("eval_interval", c.eval_interval, "full validation NLL every k iterations (0: end only)");
  b.num("checkpoint_interval", c.checkpoint_interval, "checkpoint every k iterations (0: none)");
  b.num("divergence_factor", c.divergence_factor, "stop when valid NLL exceeds this multiple of the initial one");
  b.num("divergence_patience", c.divergence_patience, "... for this many consecutive iterations");

  auto& m = c.manipulation;
  b.num("encoder_dim", m.encoder.dim, "instance encoder width");
  b.num("encoder_heads", m.encoder.heads, "instance encoder heads");
  b.num("encoder_layers", m.encoder.layers, "instance encoder blocks");
  b.num("encoder_ff", m.encoder.ff_hidden, "instance encoder feed-forward size");
  b.num("scorer_hidden", m.scorer_hidden, "scorer MLP hidden size");
  b.flag("separate_encoder", m.separate_encoder, "give the gate its own encoder");
  b.num("gate_bias", m.gate_bias, "initial gate logit");
  b.choice("gate_mode", m.gate_mode, gate_mode_name, parse_gate_mode, "learned | closed | open");
  b.choice("gate_gradient", m.gate_gradient, gate_gradient_name, parse_gate_gradient,
           "straight_through | soft");
  b.choice("augmenter_choice", m.choice, augmenter_choice_name, parse_augmenter_choice,
           "coin | learned | word | sentence");
  b.num("threshold", m.threshold, "evaluation gate threshold");
  b.flag("augment_query", m.augment_query, "augment queries as well as responses");
  b.num("mask_rate", m.mask_rate, "word-level replacement rate");
  b.num("mlm_dim", m.mlm.dim, "MLM width");
  b.num("mlm_heads", m.mlm.heads, "MLM heads");
  b.num("mlm_layers", m.mlm.layers, "MLM blocks");
  b.num("mlm_ff", m.mlm.ff_hidden, "MLM feed-forward size");
  b.num("translator_embedding", m.translator.embedding, "translator embedding size");
  b.num("translator_hidden", m.translator.hidden, "translator hidden size");
  b.num("translator_layers", m.translator.layers, "translator layers");
  b.num("translate_max_len", m.translate_max_len, "longest back-translated sentence");
  b.choice("weight_norm", m.weights.norm, weight_norm_name, parse_weight_norm,
           "sum_to_one | mean_one");
  b.flag("per_origin", m.weights.per_origin, "separate softmax for originals and augmented");
  b.flag("parent_shared", m.weights.parent_shared, "augmented samples reuse the parent's score");
  b.flag("force_uniform_weights", m.force_uniform_weights, "ignore the scorer");
  b.num("mlm_pretrain_steps", m.mlm_pretrain_steps, "MLM pretraining steps");
  b.num("translator_pretrain_steps", m.translator_pretrain_steps, "translator pretraining steps");
  b.num("pretrain_batch", m.pretrain_batch, "pretraining batch size");
  b.num("mlm_pretrain_lr", m.mlm_pretrain_lr, "MLM pretraining Adam step");
  b.num("translator_pretrain_lr", m.translator_pretrain_lr, "translator pretraining Adam step");
  return out;
}

std::vector<ConfigField> corpus_spec_fields(CorpusSpec& s) {
  std::vector<ConfigField> out;
  Binder b(out);
  b.num("n_pairs", s.n_pairs, "number of synthetic pairs");
  b.num("vocab_size", s.vocab_size, "vocabulary size including specials");
  b.choice("clean_rule", s.clean_rule, rule_name, parse_rule, "reverse | copy | shift");
  b.num("noise_rate", s.noise_rate, "fraction of pairs with random responses");
  b.num("corpus_seed", s.seed, "corpus seed");
  b.num("min_len", s.min_len, "shortest query");
  b.num("max_sentence_len", s.max_len, "longest query");
  b.num("zipf_exponent", s.zipf_exponent, "query token Zipf exponent");
  b.flag("noisy_heldout", s.noisy_heldout, "put noise into valid/test too");
  return out;
}

void apply_key_values(const std::vector<ConfigField>& fields, const KeyValues& values) {
  for (const auto& [key, value] : values) {
    const ConfigField* field = nullptr;
    for (const auto& f : fields) {
      if (f.key == key) field = &f;
    }
    if (field == nullptr) throw std::invalid_argument("unknown config key: " + key);
    try {
      field->set(value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(key + ": " + e.what());
    }
  }
}

KeyValues to_key_values(const std::vector<ConfigField>& fields) {
  KeyValues out;
  for (const auto& f : fields) out[f.key] = f.get();
  return out;
}

KeyValues train_config_values(const TrainConfig& config) {
  TrainConfig copy = config;
  return to_key_values(train_config_fields(copy));
}

TrainConfig train_config_from(const KeyValues& values) {
  TrainConfig c;
  apply_key_values(train_config_fields(c), values);
  return c;
}

KeyValues parse_key_values(std::istream& in) {
  KeyValues out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("line " + std::to_string(number) + ": expected key = value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(number) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw std::invalid_argument("line " + std::to_string(number) + ": repeated key " + key);
    }
  }
  return out;
}

std::string format_key_values(const KeyValues& values) {
  std::ostringstream os;
  for (const auto& [k, v] : values) os << k << " = " << v << '\n';
  return os.str();
}

}  // namespace datamanip
