#pragma once

// Automatic evaluation metrics for generated responses: Dist-n, Intra-n,
// Ent-n, smoothed sentence BLEU (orders 1-3), and the three embedding
// similarities (average with SIF weighting, extrema, greedy).
//
// Sentences are token-id sequences. Embedding tables are indexed by token
// id; ids outside the table fall back to the UNK row.

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace datamanip::metrics {

using Sentence = std::vector<int>;

// Maximum-likelihood n-gram probabilities for n = 1..3.
class NgramModel {
 public:
  static NgramModel fit(std::span<const Sentence> sentences);

  // 0 when unseen.
  double probability(std::span<const int> gram) const;
  // Smallest observed probability of order n.
  double floor(int n) const { return floor_.at(static_cast<std::size_t>(n - 1)); }
  const std::map<Sentence, double>& table(int n) const {
    return probs_.at(static_cast<std::size_t>(n - 1));
  }
  // Unigram probabilities by token id; unseen ids get 0.
  std::vector<double> unigram_table(int vocab_size) const;

 private:
  std::array<std::map<Sentence, double>, 3> probs_;
  std::array<double, 3> floor_{0.0, 0.0, 0.0};
};

enum class UnseenNgram { floor, skip };

// Unique n-grams over all responses / total n-grams. 0 (with a warning)
// when there are no n-grams.
double distinct_n(std::span<const Sentence> responses, int n);

// Mean per-response unique/total n-gram ratio. Responses shorter than n are
// excluded and counted in `excluded`.
double intra_distinct_n(std::span<const Sentence> responses, int n,
                        int* excluded = nullptr);

// Mean over responses of -(1/|r|) sum log2 p(gram) over the response's
// n-grams.
double entropy_n(std::span<const Sentence> responses, const NgramModel& model,
                 int n, UnseenNgram unseen = UnseenNgram::floor);

inline constexpr int kBleuMaxOrder = 3;
inline constexpr double kBleuEpsilon = 0.1;

// Geometric mean of modified n-gram precisions for n = 1..3 with add-epsilon
// smoothing of zero match counts, times the brevity penalty.
double sentence_bleu(const Sentence& hypothesis, const Sentence& reference);
// Corpus mean of sentence BLEU.
double bleu(std::span<const Sentence> hypotheses,
            std::span<const Sentence> references);

inline constexpr double kSifA = 1e-3;

// (1/|e|) sum a / (a + p(v)) * emb(v).
Eigen::VectorXd sif_embed(const Sentence& sentence,
                          const Eigen::MatrixXd& embeddings,
                          std::span<const double> unigram_probs);

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct EmbeddingScores {
  double average = 0.0;
  double extrema = 0.0;
  double greedy = 0.0;
};

Eigen::VectorXd extrema_vector(const Sentence& sentence,
                               const Eigen::MatrixXd& embeddings);
double greedy_match(const Sentence& hypothesis, const Sentence& reference,
                    const Eigen::MatrixXd& embeddings);
EmbeddingScores embedding_metrics(const Sentence& hypothesis,
                                  const Sentence& reference,
                                  const Eigen::MatrixXd& embeddings,
                                  std::span<const double> unigram_probs);

// All 13 values, as percentages.
struct MetricReport {
  std::array<double, 3> dist{};
  std::array<double, 3> intra{};
  std::array<double, 3> ent{};
  double bleu = 0.0;
  double emb_avg = 0.0;
  double emb_ext = 0.0;
  double emb_gre = 0.0;
  int pairs = 0;
  std::array<int, 3> intra_excluded{};

  nlohmann::json to_json() const;
  std::string to_table() const;
};

MetricReport evaluate(std::span<const Sentence> hypotheses,
                      std::span<const Sentence> references,
                      const NgramModel& model,
                      const Eigen::MatrixXd& embeddings,
                      std::span<const double> unigram_probs);

}  // namespace datamanip::metrics
