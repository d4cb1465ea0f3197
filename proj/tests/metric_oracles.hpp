#pragma once

// Brute-force reference implementations of the evaluation metrics. They
// favour obviousness over speed: n-grams become strings, sets are vectors
// searched linearly, and nothing is shared with the library code.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Sent = std::vector<int>;

inline std::vector<std::string> grams(const Sent& s, int n) {
  std::vector<std::string> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
    std::string g;
    for (int k = 0; k < n; ++k) g += std::to_string(s[i + k]) + ",";
    out.push_back(g);
  }
  return out;
}

inline int count_unique(const std::vector<std::string>& all) {
  std::vector<std::string> seen;
  for (const auto& g : all) {
    if (std::find(seen.begin(), seen.end(), g) == seen.end()) seen.push_back(g);
  }
  return static_cast<int>(seen.size());
}

inline double dist(const std::vector<Sent>& rs, int n) {
  std::vector<std::string> all;
  for (const auto& r : rs) {
    for (auto& g : grams(r, n)) all.push_back(g);
  }
  return all.empty() ? 0.0 : static_cast<double>(count_unique(all)) / all.size();
}

inline double intra(const std::vector<Sent>& rs, int n) {
  double acc = 0.0;
  int used = 0;
  for (const auto& r : rs) {
    auto g = grams(r, n);
    if (g.empty()) continue;
    acc += static_cast<double>(count_unique(g)) / g.size();
    ++used;
  }
  return used == 0 ? 0.0 : acc / used;
}

// MLE probability of gram g among all order-n grams of `train`.
inline double mle(const std::vector<Sent>& train, const std::string& g, int n) {
  int hits = 0, total = 0;
  for (const auto& s : train) {
    for (const auto& h : grams(s, n)) {
      ++total;
      hits += h == g ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / total;
}

inline double entropy(const std::vector<Sent>& rs, const std::vector<Sent>& train, int n) {
  double floor = 1.0;
  bool any = false;
  for (const auto& s : train) {
    for (const auto& g : grams(s, n)) {
      floor = std::min(floor, mle(train, g, n));
      any = true;
    }
  }
  double acc = 0.0;
  int used = 0;
  for (const auto& r : rs) {
    auto gs = grams(r, n);
    if (gs.empty() || !any) continue;
    double sum = 0.0;
    for (const auto& g : gs) {
      double p = mle(train, g, n);
      if (p == 0.0) p = floor;
      sum += -std::log(p) / std::log(2.0);
    }
    acc += sum / gs.size();
    ++used;
  }
  return used == 0 ? 0.0 : acc / used;
}

inline double sentence_bleu(const Sent& hyp, const Sent& ref) {
  if (hyp.empty()) return 0.0;
  double prod = 1.0;
  for (int n = 1; n <= 3; ++n) {
    auto h = grams(hyp, n);
    auto r = grams(ref, n);
    double match = 0;
    std::vector<bool> used(r.size(), false);
    for (const auto& g : h) {
      for (std::size_t k = 0; k < r.size(); ++k) {
        if (!used[k] && r[k] == g) {
          used[k] = true;
          match += 1;
          break;
        }
      }
    }
    if (match == 0) match = 0.1;
    prod *= match / std::max<double>(1.0, static_cast<double>(h.size()));
  }
  const double c = hyp.size(), rl = ref.size();
  const double bp = c > rl ? 1.0 : std::exp(1.0 - rl / c);
  return bp * std::cbrt(prod);
}

inline Eigen::VectorXd sif(const Sent& s, const Eigen::MatrixXd& emb,
                           const std::vector<double>& p) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(emb.cols());
  if (s.empty()) return v;
  for (int id : s) v += (0.001 / (0.001 + p[id])) * emb.row(id).transpose();
  return v / static_cast<double>(s.size());
}

inline double cos(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = std::sqrt(a.dot(a)), nb = std::sqrt(b.dot(b));
  if (na == 0 || nb == 0) return 0.0;
  return a.dot(b) / (na * nb);
}

inline Eigen::VectorXd extrema(const Sent& s, const Eigen::MatrixXd& emb) {
  Eigen::VectorXd out(emb.cols());
  for (Eigen::Index d = 0; d < emb.cols(); ++d) {
    double mx = -1e300, mn = 1e300;
    for (int id : s) {
      mx = std::max(mx, emb(id, d));
      mn = std::min(mn, emb(id, d));
    }
    out(d) = std::abs(mn) > std::abs(mx) ? mn : mx;
  }
  return out;
}

inline double greedy(const Sent& a, const Sent& b, const Eigen::MatrixXd& emb) {
  auto one_way = [&](const Sent& x, const Sent& y) {
    double total = 0;
    for (int i : x) {
      double best = -2;
      for (int j : y) {
        best = std::max(best, cos(emb.row(i).transpose(), emb.row(j).transpose()));
      }
      total += best;
    }
    return total / x.size();
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

}  // namespace oracle
