#pragma once

#include <string_view>
#include <vector>

namespace ordirank {

inline constexpr int kNumRanks = 3;

// Ordinal class index in [0, num_classes). For the three-class problem:
// 0 = normal, 1 = suspicious, 2 = glaucoma.
struct RankLabel {
  int rank = 0;

  bool operator==(const RankLabel&) const = default;
};

std::string_view rank_name(int rank);

// Bit t-1 is the target of sub-classifier t: true iff rank >= t.
using BinaryTargets = std::vector<bool>;

// Throws ArgumentError when rank is outside [0, num_classes) or num_classes < 2.
BinaryTargets binarize(RankLabel label, int num_classes = kNumRanks);

// Number of true votes. Inconsistent patterns such as [0,1] are counted, not repaired.
RankLabel aggregate(const std::vector<bool>& votes);

// Positive-class vote rule shared by every ranking sub-classifier.
inline constexpr double kVoteThreshold = 0.5;
inline bool vote(double positive_probability) { return positive_probability > kVoteThreshold; }

}  // namespace ordirank
