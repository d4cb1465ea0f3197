#include "datamanip/inspect.hpp"

#include <gtest/gtest.h>

#include <random>
#include <vector>

using namespace datamanip;

namespace {

double brute_auc(const std::vector<double>& clean, const std::vector<double>& noisy) {
  double wins = 0.0;
  for (double c : clean) {
    for (double n : noisy) wins += c > n ? 1.0 : (c == n ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(clean.size() * noisy.size());
}

}  // namespace

TEST(Auc, KnownValues) {
  EXPECT_EQ(noise_detection_auc(std::vector<double>{2, 3}, std::vector<double>{0, 1}), 1.0);
  EXPECT_EQ(noise_detection_auc(std::vector<double>{0, 1}, std::vector<double>{2, 3}), 0.0);
  EXPECT_EQ(noise_detection_auc(std::vector<double>{1, 1}, std::vector<double>{1}), 0.5);
  EXPECT_THROW(noise_detection_auc(std::vector<double>{}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Auc, MatchesPairwiseCountWithTies) {
  std::mt19937 gen(5);
  std::uniform_int_distribution<int> level(0, 6);
  std::uniform_int_distribution<int> size(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> clean(static_cast<std::size_t>(size(gen))), noisy(static_cast<std::size_t>(size(gen)));
    for (auto& x : clean) x = 0.5 * level(gen);
    for (auto& x : noisy) x = 0.5 * level(gen);
    const double auc = noise_detection_auc(clean, noisy);
    EXPECT_NEAR(auc, brute_auc(clean, noisy), 1e-12);
    EXPECT_GE(auc, 0.0);
    EXPECT_LE(auc, 1.0);
    // Swapping the groups mirrors the statistic.
    EXPECT_NEAR(noise_detection_auc(noisy, clean), 1.0 - auc, 1e-12);
  }
}

TEST(DecileContrast, TopAndBottomTenths) {
  std::vector<double> key, value;
  for (int i = 0; i < 20; ++i) {
    key.push_back(i);
    value.push_back(i < 2 ? 1.0 : (i >= 18 ? 5.0 : 3.0));
  }
  const DecileContrast d = decile_contrast(key, value);
  EXPECT_EQ(d.group_size, 2u);
  EXPECT_EQ(d.top_mean, 5.0);
  EXPECT_EQ(d.bottom_mean, 1.0);
  EXPECT_EQ(d.top_key_min, 18.0);
  EXPECT_EQ(d.bottom_key_max, 1.0);
}

TEST(DecileContrast, TiesKeepInputOrderAndSmallInputsUseOneItem) {
  const std::vector<double> key{1, 1, 1};
  const std::vector<double> value{10, 20, 30};
  const DecileContrast d = decile_contrast(key, value);
  EXPECT_EQ(d.group_size, 1u);
  EXPECT_EQ(d.top_mean, 10.0);
  EXPECT_EQ(d.bottom_mean, 30.0);
  EXPECT_THROW(decile_contrast(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  EXPECT_THROW(decile_contrast(std::vector<double>{1, 2}, std::vector<double>{1}), std::invalid_argument);
}
