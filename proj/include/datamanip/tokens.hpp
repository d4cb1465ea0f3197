#pragma once

#include <vector>

namespace datamanip {

using TokenIds = std::vector<int>;

// Reserved ids shared by every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNumSpecials = 4;

inline constexpr bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

}  // namespace datamanip
