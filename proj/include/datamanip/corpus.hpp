#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "datamanip/tokens.hpp"

namespace datamanip {

inline constexpr int kDefaultMaxSequenceLength = 32;

class Vocabulary {
 public:
  Vocabulary();

  // Returns the id of `token`, adding it if unseen.
  int add(const std::string& token);
  // Returns kUnk for unseen tokens.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenIds encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  static Vocabulary from_tokens(const std::vector<std::string>& tokens);
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class Origin { original, word_aug, sent_aug };
const char* origin_name(Origin origin);

struct DialoguePair {
  TokenIds query;
  TokenIds response;
  std::int64_t id = 0;
  Origin origin = Origin::original;
  std::optional<std::int64_t> parent_id;
};

// Padded id grids and 0/1 masks for a list of pairs.
struct Batch {
  std::vector<DialoguePair> pairs;
  Eigen::MatrixXi query_ids;
  Eigen::MatrixXi response_ids;
  Eigen::MatrixXd query_mask;
  Eigen::MatrixXd response_mask;

  static Batch from_pairs(std::vector<DialoguePair> pairs);
  std::size_t size() const { return pairs.size(); }
};

struct Corpus {
  std::vector<DialoguePair> train;
  std::vector<DialoguePair> valid;
  std::vector<DialoguePair> test;
};

struct LoadedCorpus {
  Corpus corpus;
  Vocabulary vocab;
  // Lines dropped as duplicates, per split.
  std::size_t duplicates_removed = 0;
};

// Lowercases and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

// Reads one "query<TAB>response" file. Ids are assigned from `first_id`.
// With `grow_vocab` unseen tokens are added, otherwise they map to UNK.
std::vector<DialoguePair> load_split(const std::filesystem::path& path,
                                     Vocabulary& vocab, bool grow_vocab,
                                     std::int64_t first_id,
                                     std::size_t* duplicates = nullptr,
                                     int max_len = kDefaultMaxSequenceLength);

// A directory holding train.tsv / valid.tsv / test.tsv (valid and test
// optional), or a single file that becomes the training split. The
// vocabulary is built from the training split unless one is supplied.
LoadedCorpus load_corpus(const std::filesystem::path& path,
                         const Vocabulary* vocab = nullptr,
                         int max_len = kDefaultMaxSequenceLength);

void write_split(const std::filesystem::path& path,
                 std::span<const DialoguePair> pairs, const Vocabulary& vocab);

// Seeded per-epoch shuffling; the final short batch of an epoch is emitted.
class BatchIterator {
 public:
  BatchIterator(std::span<const DialoguePair> split, int batch_size,
                std::uint64_t seed);

  // All batches of one epoch; reproducible given (seed, epoch).
  std::vector<Batch> epoch_batches(std::uint64_t epoch) const;
  // Endless stream over consecutive epochs. Throws on an empty split.
  Batch next();
  std::uint64_t epoch() const { return epoch_; }
  bool empty() const { return split_.empty(); }

 private:
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;

  std::vector<DialoguePair> split_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic corpora with controlled label noise.

enum class CleanRule { reverse, copy, shift };
const char* rule_name(CleanRule rule);
CleanRule parse_rule(std::string_view name);

struct CorpusSpec {
  int n_pairs = 1000;
  // Includes the four special tokens.
  int vocab_size = 50;
  CleanRule clean_rule = CleanRule::reverse;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
  int min_len = 4;
  int max_len = 8;
  // Query tokens follow a Zipf law with this exponent; noisy responses are
  // drawn uniformly over the content vocabulary.
  double zipf_exponent = 1.0;
  // When false, label noise is confined to the training split and the
  // validation/test splits are clean.
  bool noisy_heldout = false;

  void validate() const;
};

struct SyntheticCorpus {
  Corpus corpus;
  Vocabulary vocab;
  // Indexed by pair id. Never given to the manipulation network.
  std::vector<bool> noisy;

  bool is_noisy(std::int64_t id) const { return noisy.at(static_cast<std::size_t>(id)); }
};

TokenIds apply_rule(CleanRule rule, std::span<const int> query, int vocab_size);
bool satisfies_rule(const DialoguePair& pair, CleanRule rule, int vocab_size);

SyntheticCorpus make_synthetic_corpus(const CorpusSpec& spec);

// ---------------------------------------------------------------------------
// Word vectors and query-relatedness.

// Rows indexed by vocabulary id. Tokens missing from the file take the UNK
// row (zero unless the file defines "<unk>").
Eigen::MatrixXd load_embeddings(const std::filesystem::path& path,
                                const Vocabulary& vocab);
void write_embeddings(const std::filesystem::path& path,
                      const Eigen::MatrixXd& table, const Vocabulary& vocab);
Eigen::MatrixXd random_embeddings(const Vocabulary& vocab, int dim,
                                  std::uint64_t seed);

// MLE unigram probabilities over the queries and responses of a split.
std::vector<double> unigram_probabilities(std::span<const DialoguePair> split,
                                          int vocab_size);

// clamp(cos(sif(query), sif(response)), 0, 1).
double query_relatedness(const DialoguePair& pair,
                         const Eigen::MatrixXd& embeddings,
                         std::span<const double> unigram_probs);

}  // namespace datamanip
