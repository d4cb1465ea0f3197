#pragma once

// Post-hoc summaries of a training run: how well the learned weights separate
// clean from noisy instances, and how augmentation frequency relates to a
// per-instance score such as query relatedness.

#include <cstdint>
#include <span>
#include <vector>

namespace datamanip {

// Probability that a random clean instance outweighs a random noisy one; ties
// count one half. Throws when either group is empty.
double noise_detection_auc(std::span<const double> clean, std::span<const double> noisy);

struct DecileContrast {
  double top_mean = 0.0;
  double bottom_mean = 0.0;
  std::size_t group_size = 0;
  double top_key_min = 0.0;     // smallest key inside the top group
  double bottom_key_max = 0.0;  // largest key inside the bottom group
};

// Orders items by `key` descending (ties keep input order) and averages
// `value` over the first and last tenth, at least one item each. Throws on
// size mismatch or fewer than two items.
DecileContrast decile_contrast(std::span<const double> key, std::span<const double> value);

}  // namespace datamanip
