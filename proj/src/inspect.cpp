#include "datamanip/inspect.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace datamanip {

double noise_detection_auc(std::span<const double> clean, std::span<const double> noisy) {
  if (clean.empty() || noisy.empty()) {
    throw std::invalid_argument("AUC needs at least one clean and one noisy instance");
  }
  // Rank-sum form: sort once, then count wins with tie halves per run of equal values.
  std::vector<std::pair<double, bool>> all;
  all.reserve(clean.size() + noisy.size());
  for (double c : clean) all.emplace_back(c, true);
  for (double n : noisy) all.emplace_back(n, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double wins = 0.0;
  std::size_t noisy_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t clean_run = 0, noisy_run = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? clean_run : noisy_run) += 1;
      ++j;
    }
    wins += static_cast<double>(clean_run) *
            (static_cast<double>(noisy_below) + 0.5 * static_cast<double>(noisy_run));
    noisy_below += noisy_run;
    i = j;
  }
  return wins / (static_cast<double>(clean.size()) * static_cast<double>(noisy.size()));
}

DecileContrast decile_contrast(std::span<const double> key, std::span<const double> value) {
  if (key.size() != value.size()) throw std::invalid_argument("key/value size mismatch");
  if (key.size() < 2) throw std::invalid_argument("decile contrast needs at least two items");
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  DecileContrast out;
  out.group_size = std::max<std::size_t>(1, key.size() / 10);
  for (std::size_t i = 0; i < out.group_size; ++i) {
    out.top_mean += value[order[i]];
    out.bottom_mean += value[order[order.size() - 1 - i]];
  }
  out.top_mean /= static_cast<double>(out.group_size);
  out.bottom_mean /= static_cast<double>(out.group_size);
  out.top_key_min = key[order[out.group_size - 1]];
  out.bottom_key_max = key[order[order.size() - out.group_size]];
  return out;
}

}  // namespace datamanip
