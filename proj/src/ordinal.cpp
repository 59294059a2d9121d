#include "ordirank/ordinal.hpp"

#include <algorithm>
#include <string>

#include "ordirank/errors.hpp"

namespace ordirank {

std::string_view rank_name(int rank) {
  switch (rank) {
    case 0:
      return "normal";
    case 1:
      return "suspicious";
    case 2:
      return "glaucoma";
    default:
      return "unknown";
  }
}

BinaryTargets binarize(RankLabel label, int num_classes) {
  if (num_classes < 2) throw ArgumentError("binarize: need at least 2 classes");
  if (label.rank < 0 || label.rank >= num_classes) {
    throw ArgumentError("binarize: rank " + std::to_string(label.rank) + " outside [0, " +
                        std::to_string(num_classes) + ")");
  }
  BinaryTargets bits(static_cast<std::size_t>(num_classes - 1));
  for (int t = 1; t < num_classes; ++t) bits[static_cast<std::size_t>(t - 1)] = label.rank >= t;
  return bits;
}

RankLabel aggregate(const std::vector<bool>& votes) {
  return RankLabel{static_cast<int>(std::count(votes.begin(), votes.end(), true))};
}

}  // namespace ordirank
