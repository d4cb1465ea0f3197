#include "datamanip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "datamanip/log.hpp"
#include "datamanip/tokens.hpp"

namespace datamanip::metrics {

namespace {

void check_order(int n) {
  if (n < 1 || n > 3) throw std::invalid_argument("n-gram order must be 1..3");
}

// Number of n-grams in a sentence of the given length.
std::size_t gram_count(std::size_t length, int n) {
  const auto un = static_cast<std::size_t>(n);
  return length >= un ? length - un + 1 : 0;
}

Sentence gram_at(const Sentence& s, std::size_t i, int n) {
  return Sentence(s.begin() + static_cast<std::ptrdiff_t>(i),
                  s.begin() + static_cast<std::ptrdiff_t>(i) + n);
}

Eigen::VectorXd embedding_row(const Eigen::MatrixXd& table, int id) {
  if (id >= 0 && id < table.rows()) return table.row(id).transpose();
  return table.row(kUnk).transpose();
}

}  // namespace

NgramModel NgramModel::fit(std::span<const Sentence> sentences) {
  NgramModel model;
  for (int n = 1; n <= 3; ++n) {
    std::map<Sentence, double> counts;
    double total = 0.0;
    for (const auto& s : sentences) {
      for (std::size_t i = 0; i < gram_count(s.size(), n); ++i) {
        counts[gram_at(s, i, n)] += 1.0;
        total += 1.0;
      }
    }
    double lowest = 0.0;
    if (total > 0.0) {
      lowest = std::numeric_limits<double>::infinity();
      for (auto& [gram, c] : counts) {
        c /= total;
        lowest = std::min(lowest, c);
      }
    }
    model.probs_[static_cast<std::size_t>(n - 1)] = std::move(counts);
    model.floor_[static_cast<std::size_t>(n - 1)] = lowest;
  }
  return model;
}

double NgramModel::probability(std::span<const int> gram) const {
  check_order(static_cast<int>(gram.size()));
  const auto& table = probs_[gram.size() - 1];
  auto it = table.find(Sentence(gram.begin(), gram.end()));
  return it == table.end() ? 0.0 : it->second;
}

std::vector<double> NgramModel::unigram_table(int vocab_size) const {
  std::vector<double> out(static_cast<std::size_t>(vocab_size), 0.0);
  for (const auto& [gram, p] : probs_[0]) {
    if (gram[0] >= 0 && gram[0] < vocab_size) {
      out[static_cast<std::size_t>(gram[0])] = p;
    }
  }
  return out;
}

double distinct_n(std::span<const Sentence> responses, int n) {
  check_order(n);
  std::set<Sentence> unique;
  std::size_t total = 0;
  for (const auto& r : responses) {
    for (std::size_t i = 0; i < gram_count(r.size(), n); ++i) {
      unique.insert(gram_at(r, i, n));
      ++total;
    }
  }
  if (total == 0) {
    warn("distinct_n: no n-grams of order " + std::to_string(n));
    return 0.0;
  }
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double intra_distinct_n(std::span<const Sentence> responses, int n,
                        int* excluded) {
  check_order(n);
  double acc = 0.0;
  int used = 0;
  int skipped = 0;
  for (const auto& r : responses) {
    const std::size_t total = gram_count(r.size(), n);
    if (total == 0) {
      ++skipped;
      continue;
    }
    std::set<Sentence> unique;
    for (std::size_t i = 0; i < total; ++i) unique.insert(gram_at(r, i, n));
    acc += static_cast<double>(unique.size()) / static_cast<double>(total);
    ++used;
  }
  if (excluded) *excluded = skipped;
  return used == 0 ? 0.0 : acc / used;
}

double entropy_n(std::span<const Sentence> responses, const NgramModel& model,
                 int n, UnseenNgram unseen) {
  check_order(n);
  double acc = 0.0;
  int used = 0;
  for (const auto& r : responses) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < gram_count(r.size(), n); ++i) {
      double p = model.probability(
          std::span<const int>(r.data() + i, static_cast<std::size_t>(n)));
      if (p <= 0.0) {
        if (unseen == UnseenNgram::skip) continue;
        p = model.floor(n);
        if (p <= 0.0) continue;  // model has no n-grams of this order
      }
      sum -= std::log2(p);
      ++counted;
    }
    if (counted == 0) continue;
    acc += sum / static_cast<double>(counted);
    ++used;
  }
  return used == 0 ? 0.0 : acc / used;
}

double sentence_bleu(const Sentence& hypothesis, const Sentence& reference) {
  if (hypothesis.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= kBleuMaxOrder; ++n) {
    std::map<Sentence, int> ref_counts;
    for (std::size_t i = 0; i < gram_count(reference.size(), n); ++i) {
      ++ref_counts[gram_at(reference, i, n)];
    }
    std::map<Sentence, int> hyp_counts;
    const std::size_t total = gram_count(hypothesis.size(), n);
    for (std::size_t i = 0; i < total; ++i) ++hyp_counts[gram_at(hypothesis, i, n)];
    int matches = 0;
    for (const auto& [gram, c] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(c, it->second);
    }
    const double denom = static_cast<double>(std::max<std::size_t>(total, 1));
    const double numer = matches > 0 ? static_cast<double>(matches) : kBleuEpsilon;
    log_sum += std::log(numer / denom);
  }
  const double c = static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / kBleuMaxOrder);
}

double bleu(std::span<const Sentence> hypotheses,
            std::span<const Sentence> references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
  }
  if (hypotheses.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    acc += sentence_bleu(hypotheses[i], references[i]);
  }
  return acc / static_cast<double>(hypotheses.size());
}

Eigen::VectorXd sif_embed(const Sentence& sentence,
                          const Eigen::MatrixXd& embeddings,
                          std::span<const double> unigram_probs) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(embeddings.cols());
  if (sentence.empty()) {
    warn("sif_embed: empty sentence");
    return out;
  }
  for (int id : sentence) {
    const int row = (id >= 0 && id < embeddings.rows()) ? id : kUnk;
    const double p = (row >= 0 && static_cast<std::size_t>(row) < unigram_probs.size())
                         ? unigram_probs[static_cast<std::size_t>(row)]
                         : 0.0;
    out += (kSifA / (kSifA + p)) * embeddings.row(row).transpose();
  }
  return out / static_cast<double>(sentence.size());
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    warn("cosine of a zero vector");
    return 0.0;
  }
  return a.dot(b) / (na * nb);
}

Eigen::VectorXd extrema_vector(const Sentence& sentence,
                               const Eigen::MatrixXd& embeddings) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(embeddings.cols());
  for (int id : sentence) {
    Eigen::VectorXd e = embedding_row(embeddings, id);
    for (Eigen::Index d = 0; d < e.size(); ++d) {
      const double cur = std::abs(out(d));
      const double cand = std::abs(e(d));
      if (cand > cur || (cand == cur && e(d) > out(d))) out(d) = e(d);
    }
  }
  return out;
}

namespace {

double directed_greedy(const Sentence& from, const Sentence& to,
                       const Eigen::MatrixXd& embeddings) {
  if (from.empty() || to.empty()) return 0.0;
  double acc = 0.0;
  for (int a : from) {
    const Eigen::VectorXd ea = embedding_row(embeddings, a);
    double best = -std::numeric_limits<double>::infinity();
    for (int b : to) {
      const Eigen::VectorXd eb = embedding_row(embeddings, b);
      const double na = ea.norm();
      const double nb = eb.norm();
      const double c = (na == 0.0 || nb == 0.0) ? 0.0 : ea.dot(eb) / (na * nb);
      best = std::max(best, c);
    }
    acc += best;
  }
  return acc / static_cast<double>(from.size());
}

}  // namespace

double greedy_match(const Sentence& hypothesis, const Sentence& reference,
                    const Eigen::MatrixXd& embeddings) {
  return 0.5 * (directed_greedy(hypothesis, reference, embeddings) +
                directed_greedy(reference, hypothesis, embeddings));
}

EmbeddingScores embedding_metrics(const Sentence& hypothesis,
                                  const Sentence& reference,
                                  const Eigen::MatrixXd& embeddings,
                                  std::span<const double> unigram_probs) {
  EmbeddingScores s;
  s.average = cosine(sif_embed(hypothesis, embeddings, unigram_probs),
                     sif_embed(reference, embeddings, unigram_probs));
  s.extrema = cosine(extrema_vector(hypothesis, embeddings),
                     extrema_vector(reference, embeddings));
  s.greedy = greedy_match(hypothesis, reference, embeddings);
  return s;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  for (int n = 1; n <= 3; ++n) {
    const auto i = static_cast<std::size_t>(n - 1);
    j["dist_" + std::to_string(n)] = dist[i];
    j["intra_" + std::to_string(n)] = intra[i];
    j["ent_" + std::to_string(n)] = ent[i];
  }
  j["bleu"] = bleu;
  j["emb_avg"] = emb_avg;
  j["emb_ext"] = emb_ext;
  j["emb_gre"] = emb_gre;
  j["pairs"] = pairs;
  j["intra_excluded"] = intra_excluded;
  j["bleu_smoothing"] = "add-epsilon 0.1 on zero-match orders, orders 1-3";
  return j;
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  const std::vector<std::pair<std::string, double>> rows = {
      {"Dist-1", dist[0]},  {"Dist-2", dist[1]},  {"Dist-3", dist[2]},
      {"Intra-1", intra[0]}, {"Intra-2", intra[1]}, {"Intra-3", intra[2]},
      {"Ent-1", ent[0]},    {"Ent-2", ent[1]},    {"Ent-3", ent[2]},
      {"BLEU", bleu},       {"Avg", emb_avg},     {"Ext", emb_ext},
      {"Gre", emb_gre}};
  for (const auto& [name, value] : rows) {
    out << std::left << std::setw(10) << name << std::right << std::setw(12)
        << std::fixed << std::setprecision(4) << value << '\n';
  }
  out << std::left << std::setw(10) << "pairs" << std::right << std::setw(12)
      << pairs << '\n';
  return out.str();
}

MetricReport evaluate(std::span<const Sentence> hypotheses,
                      std::span<const Sentence> references,
                      const NgramModel& model,
                      const Eigen::MatrixXd& embeddings,
                      std::span<const double> unigram_probs) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("evaluate: hypothesis/reference count mismatch");
  }
  MetricReport r;
  r.pairs = static_cast<int>(hypotheses.size());
  for (int n = 1; n <= 3; ++n) {
    const auto i = static_cast<std::size_t>(n - 1);
    r.dist[i] = 100.0 * distinct_n(hypotheses, n);
    r.intra[i] = 100.0 * intra_distinct_n(hypotheses, n, &r.intra_excluded[i]);
    // Entropy is reported in bits, not scaled.
    r.ent[i] = entropy_n(hypotheses, model, n);
  }
  r.bleu = 100.0 * bleu(hypotheses, references);
  double avg = 0.0, ext = 0.0, gre = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (hypotheses[i].empty() || references[i].empty()) {
      warn("embedding metrics: empty sentence scored 0");
      continue;
    }
    const auto s = embedding_metrics(hypotheses[i], references[i], embeddings,
                                     unigram_probs);
    avg += s.average;
    ext += s.extrema;
    gre += s.greedy;
  }
  if (!hypotheses.empty()) {
    const double n = static_cast<double>(hypotheses.size());
    r.emb_avg = 100.0 * avg / n;
    r.emb_ext = 100.0 * ext / n;
    r.emb_gre = 100.0 * gre / n;
  }
  return r;
}

}  // namespace datamanip::metrics
