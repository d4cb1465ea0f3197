#include "datamanip/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "datamanip/log.hpp"
#include "datamanip/metrics.hpp"
#include "datamanip/rng.hpp"

namespace datamanip {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s = {"<pad>", "<unk>", "<bos>", "<eos>"};
  return s;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& t : special_tokens()) add(t);
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) return tokens_[kUnk];
  return tokens_[static_cast<std::size_t>(id)];
}

TokenIds Vocabulary::encode(std::span<const std::string> tokens) const {
  TokenIds out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < special_tokens().size() ||
      !std::equal(special_tokens().begin(), special_tokens().end(),
                  tokens.begin())) {
    throw std::invalid_argument("vocabulary must start with the special tokens");
  }
  Vocabulary v;
  for (std::size_t i = special_tokens().size(); i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) {
      throw std::invalid_argument("duplicate vocabulary token: " + tokens[i]);
    }
    v.add(tokens[i]);
  }
  return v;
}

const char* origin_name(Origin origin) {
  switch (origin) {
    case Origin::original: return "original";
    case Origin::word_aug: return "word_aug";
    case Origin::sent_aug: return "sent_aug";
  }
  return "unknown";
}

Batch Batch::from_pairs(std::vector<DialoguePair> pairs) {
  Batch b;
  b.pairs = std::move(pairs);
  const auto n = static_cast<Eigen::Index>(b.pairs.size());
  Eigen::Index qmax = 0, rmax = 0;
  for (const auto& p : b.pairs) {
    qmax = std::max<Eigen::Index>(qmax, static_cast<Eigen::Index>(p.query.size()));
    rmax = std::max<Eigen::Index>(rmax, static_cast<Eigen::Index>(p.response.size()));
  }
  b.query_ids = Eigen::MatrixXi::Constant(n, qmax, kPad);
  b.response_ids = Eigen::MatrixXi::Constant(n, rmax, kPad);
  b.query_mask = Eigen::MatrixXd::Zero(n, qmax);
  b.response_mask = Eigen::MatrixXd::Zero(n, rmax);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = b.pairs[static_cast<std::size_t>(i)];
    for (std::size_t t = 0; t < p.query.size(); ++t) {
      b.query_ids(i, static_cast<Eigen::Index>(t)) = p.query[t];
      b.query_mask(i, static_cast<Eigen::Index>(t)) = 1.0;
    }
    for (std::size_t t = 0; t < p.response.size(); ++t) {
      b.response_ids(i, static_cast<Eigen::Index>(t)) = p.response[t];
      b.response_mask(i, static_cast<Eigen::Index>(t)) = 1.0;
    }
  }
  return b;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<DialoguePair> load_split(const std::filesystem::path& path,
                                     Vocabulary& vocab, bool grow_vocab,
                                     std::int64_t first_id,
                                     std::size_t* duplicates, int max_len) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  std::vector<DialoguePair> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::size_t dropped = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw std::runtime_error(where + ": expected exactly one TAB");
    }
    auto q = tokenize(std::string_view(line).substr(0, tab));
    auto r = tokenize(std::string_view(line).substr(tab + 1));
    if (q.empty() || r.empty()) {
      throw std::runtime_error(where + ": empty query or response");
    }
    if (static_cast<int>(q.size()) > max_len) q.resize(static_cast<std::size_t>(max_len));
    if (static_cast<int>(r.size()) > max_len) r.resize(static_cast<std::size_t>(max_len));
    if (!seen.emplace(detokenize(q), detokenize(r)).second) {
      ++dropped;
      continue;
    }
    if (grow_vocab) {
      for (const auto& t : q) vocab.add(t);
      for (const auto& t : r) vocab.add(t);
    }
    DialoguePair p;
    p.query = vocab.encode(q);
    p.response = vocab.encode(r);
    p.id = first_id + static_cast<std::int64_t>(out.size());
    out.push_back(std::move(p));
  }
  if (line_no == 0) throw std::runtime_error("empty corpus file " + path.string());
  if (duplicates) *duplicates += dropped;
  return out;
}

namespace {

// Frequency-ordered vocabulary (ties broken lexicographically) so ids do not
// depend on line order.
Vocabulary vocabulary_from_file(const std::filesystem::path& path, int max_len) {
  Vocabulary scratch;
  auto pairs = load_split(path, scratch, true, 0, nullptr, max_len);
  std::map<std::string, std::size_t> counts;
  for (const auto& p : pairs) {
    for (int id : p.query) ++counts[scratch.token(id)];
    for (int id : p.response) ++counts[scratch.token(id)];
  }
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  Vocabulary v;
  for (const auto& [tok, c] : sorted) {
    if (!v.contains(tok)) v.add(tok);
  }
  return v;
}

}  // namespace

LoadedCorpus load_corpus(const std::filesystem::path& path,
                         const Vocabulary* vocab, int max_len) {
  namespace fs = std::filesystem;
  LoadedCorpus out;
  fs::path train = path;
  fs::path valid, test;
  if (fs::is_directory(path)) {
    train = path / "train.tsv";
    if (fs::exists(path / "valid.tsv")) valid = path / "valid.tsv";
    if (fs::exists(path / "test.tsv")) test = path / "test.tsv";
  }
  if (!fs::exists(train)) {
    throw std::runtime_error("corpus not found: " + train.string());
  }
  out.vocab = vocab ? *vocab : vocabulary_from_file(train, max_len);
  std::int64_t next_id = 0;
  out.corpus.train = load_split(train, out.vocab, false, next_id,
                                &out.duplicates_removed, max_len);
  next_id += static_cast<std::int64_t>(out.corpus.train.size());
  if (!valid.empty()) {
    out.corpus.valid = load_split(valid, out.vocab, false, next_id,
                                  &out.duplicates_removed, max_len);
    next_id += static_cast<std::int64_t>(out.corpus.valid.size());
  }
  if (!test.empty()) {
    out.corpus.test = load_split(test, out.vocab, false, next_id,
                                 &out.duplicates_removed, max_len);
  }
  return out;
}

void write_split(const std::filesystem::path& path,
                 std::span<const DialoguePair> pairs, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pairs) {
    const auto q = vocab.decode(p.query);
    const auto r = vocab.decode(p.response);
    out << detokenize(q) << '\t' << detokenize(r) << '\n';
  }
}

BatchIterator::BatchIterator(std::span<const DialoguePair> split,
                             int batch_size, std::uint64_t seed)
    : split_(split.begin(), split.end()), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

std::vector<std::size_t> BatchIterator::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(split_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed_, "epoch", epoch));
  rng.shuffle(order.begin(), order.end());
  return order;
}

std::vector<Batch> BatchIterator::epoch_batches(std::uint64_t epoch) const {
  std::vector<Batch> out;
  const auto order = epoch_order(epoch);
  const auto bs = static_cast<std::size_t>(batch_size_);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<DialoguePair> pairs;
    for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
      pairs.push_back(split_[order[i]]);
    }
    out.push_back(Batch::from_pairs(std::move(pairs)));
  }
  return out;
}

Batch BatchIterator::next() {
  if (split_.empty()) throw std::runtime_error("BatchIterator: empty split");
  if (order_.empty()) order_ = epoch_order(epoch_);
  if (cursor_ >= order_.size()) {
    ++epoch_;
    order_ = epoch_order(epoch_);
    cursor_ = 0;
  }
  const auto bs = static_cast<std::size_t>(batch_size_);
  std::vector<DialoguePair> pairs;
  const std::size_t end = std::min(order_.size(), cursor_ + bs);
  for (std::size_t i = cursor_; i < end; ++i) pairs.push_back(split_[order_[i]]);
  cursor_ = end;
  return Batch::from_pairs(std::move(pairs));
}

// ---------------------------------------------------------------------------

const char* rule_name(CleanRule rule) {
  switch (rule) {
    case CleanRule::reverse: return "reverse";
    case CleanRule::copy: return "copy";
    case CleanRule::shift: return "shift";
  }
  return "unknown";
}

CleanRule parse_rule(std::string_view name) {
  if (name == "reverse") return CleanRule::reverse;
  if (name == "copy") return CleanRule::copy;
  if (name == "shift") return CleanRule::shift;
  throw std::invalid_argument("unknown clean rule: " + std::string(name));
}

void CorpusSpec::validate() const {
  if (n_pairs < 1) throw std::invalid_argument("n_pairs must be >= 1");
  if (vocab_size < 8) {
    throw std::invalid_argument("vocab_size must be >= 8 (specials + rule headroom)");
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw std::invalid_argument("noise_rate must lie in [0, 1]");
  }
  if (min_len < 1 || max_len < min_len) {
    throw std::invalid_argument("need 1 <= min_len <= max_len");
  }
  if (max_len > kDefaultMaxSequenceLength) {
    throw std::invalid_argument("max_len exceeds the sequence length limit");
  }
  if (zipf_exponent < 0.0) throw std::invalid_argument("zipf_exponent must be >= 0");
}

TokenIds apply_rule(CleanRule rule, std::span<const int> query, int vocab_size) {
  TokenIds out(query.begin(), query.end());
  switch (rule) {
    case CleanRule::reverse:
      std::reverse(out.begin(), out.end());
      break;
    case CleanRule::copy:
      break;
    case CleanRule::shift: {
      const int content = vocab_size - kNumSpecials;
      for (int& t : out) t = kNumSpecials + (t - kNumSpecials + 1) % content;
      break;
    }
  }
  return out;
}

bool satisfies_rule(const DialoguePair& pair, CleanRule rule, int vocab_size) {
  return pair.response == apply_rule(rule, pair.query, vocab_size);
}

SyntheticCorpus make_synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "corpus"));
  const int content = spec.vocab_size - kNumSpecials;

  SyntheticCorpus out;
  for (int i = 0; i < content; ++i) out.vocab.add("w" + std::to_string(i));

  std::vector<double> cdf(static_cast<std::size_t>(content));
  double acc = 0.0;
  for (int k = 0; k < content; ++k) {
    acc += 1.0 / std::pow(static_cast<double>(k + 1), spec.zipf_exponent);
    cdf[static_cast<std::size_t>(k)] = acc;
  }
  for (double& c : cdf) c /= acc;
  auto zipf_token = [&] {
    const double u = rng.uniform();
    const auto k = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    return kNumSpecials + std::min(k, content - 1);
  };
  auto uniform_token = [&] {
    return kNumSpecials + static_cast<int>(rng.below(static_cast<std::uint64_t>(content)));
  };
  auto draw_length = [&] {
    return spec.min_len +
           static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1)));
  };

  const int n = spec.n_pairs;
  const int n_valid = n / 10;
  const int n_test = n / 10;
  const int n_train = n - n_valid - n_test;

  // Which pairs carry noise.
  const int pool = spec.noisy_heldout ? n : n_train;
  const auto n_noisy = static_cast<int>(std::lround(spec.noise_rate * pool));
  std::vector<int> candidates(static_cast<std::size_t>(pool));
  for (int i = 0; i < pool; ++i) candidates[static_cast<std::size_t>(i)] = i;
  rng.shuffle(candidates.begin(), candidates.end());
  out.noisy.assign(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_noisy; ++i) {
    out.noisy[static_cast<std::size_t>(candidates[static_cast<std::size_t>(i)])] = true;
  }

  std::set<std::pair<TokenIds, TokenIds>> seen;
  for (int i = 0; i < n; ++i) {
    DialoguePair p;
    p.id = i;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) {
        throw std::runtime_error("synthetic corpus: cannot draw distinct pairs; "
                                 "increase vocab_size or lengths");
      }
      p.query.clear();
      const int len = draw_length();
      for (int t = 0; t < len; ++t) p.query.push_back(zipf_token());
      if (out.noisy[static_cast<std::size_t>(i)]) {
        p.response.clear();
        const int rlen = draw_length();
        for (int t = 0; t < rlen; ++t) p.response.push_back(uniform_token());
        if (satisfies_rule(p, spec.clean_rule, spec.vocab_size)) continue;
      } else {
        p.response = apply_rule(spec.clean_rule, p.query, spec.vocab_size);
      }
      if (seen.emplace(p.query, p.response).second) break;
    }
    if (i < n_train) {
      out.corpus.train.push_back(std::move(p));
    } else if (i < n_train + n_valid) {
      out.corpus.valid.push_back(std::move(p));
    } else {
      out.corpus.test.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd load_embeddings(const std::filesystem::path& path,
                                const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
  std::map<int, std::vector<double>> rows;
  std::optional<std::vector<double>> unk_row;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (values.empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": no vector values");
    }
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": inconsistent dimension");
    }
    if (token == "<unk>") unk_row = values;
    if (vocab.contains(token)) rows[vocab.id(token)] = std::move(values);
  }
  if (dim == 0) throw std::runtime_error("empty embedding file " + path.string());
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(vocab.size(), static_cast<Eigen::Index>(dim));
  if (unk_row) {
    for (std::size_t d = 0; d < dim; ++d) table(kUnk, static_cast<Eigen::Index>(d)) = (*unk_row)[d];
  }
  for (int id = 0; id < vocab.size(); ++id) {
    auto it = rows.find(id);
    const auto& src = it != rows.end() ? it->second : std::vector<double>{};
    for (std::size_t d = 0; d < dim; ++d) {
      table(id, static_cast<Eigen::Index>(d)) =
          src.empty() ? table(kUnk, static_cast<Eigen::Index>(d)) : src[d];
    }
  }
  return table;
}

void write_embeddings(const std::filesystem::path& path,
                      const Eigen::MatrixXd& table, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  for (int id = 0; id < vocab.size(); ++id) {
    out << vocab.token(id);
    for (Eigen::Index d = 0; d < table.cols(); ++d) out << ' ' << table(id, d);
    out << '\n';
  }
}

Eigen::MatrixXd random_embeddings(const Vocabulary& vocab, int dim,
                                  std::uint64_t seed) {
  Rng rng(derive_seed(seed, "embeddings"));
  Eigen::MatrixXd t(vocab.size(), dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * s;
  t.row(kPad).setZero();
  return t;
}

std::vector<double> unigram_probabilities(std::span<const DialoguePair> split,
                                          int vocab_size) {
  std::vector<double> p(static_cast<std::size_t>(vocab_size), 0.0);
  double total = 0.0;
  for (const auto& pair : split) {
    for (int id : pair.query) p[static_cast<std::size_t>(id)] += 1.0;
    for (int id : pair.response) p[static_cast<std::size_t>(id)] += 1.0;
    total += static_cast<double>(pair.query.size() + pair.response.size());
  }
  if (total > 0.0) {
    for (double& x : p) x /= total;
  }
  return p;
}

double query_relatedness(const DialoguePair& pair,
                         const Eigen::MatrixXd& embeddings,
                         std::span<const double> unigram_probs) {
  auto all_unk = [](const TokenIds& s) {
    return std::all_of(s.begin(), s.end(), [](int t) { return t == kUnk; });
  };
  if (all_unk(pair.query) || all_unk(pair.response)) {
    warn("query_relatedness: all-UNK sentence scored 0");
    return 0.0;
  }
  const auto q = metrics::sif_embed(pair.query, embeddings, unigram_probs);
  const auto r = metrics::sif_embed(pair.response, embeddings, unigram_probs);
  return std::clamp(metrics::cosine(q, r), 0.0, 1.0);
}

}  // namespace datamanip
