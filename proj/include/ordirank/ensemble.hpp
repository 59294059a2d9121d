#pragma once

#include <array>
#include <vector>

#include "ordirank/dataio.hpp"
#include "ordirank/models.hpp"
#include "ordirank/ordinal.hpp"

namespace ordirank {

struct RankPrediction {
  RankLabel rank;
  // Positive-class probability of the (N)-(SG) and (NS)-(G) sub-classifiers.
  std::array<double, 2> positive{0.0, 0.0};
};

// Each sub-classifier votes when its positive probability exceeds 0.5; the rank is the vote count.
RankPrediction rank_from_probabilities(double normal_vs_rest, double glaucoma_vs_rest);

// Eval-mode forward of both sub-classifiers on a single [3,H,W] image.
RankPrediction predict_rank(SubClassifier& normal_vs_rest, SubClassifier& glaucoma_vs_rest, const Tensor& image);

// Batched variant over a dataset.
std::vector<RankPrediction> predict_ranks(SubClassifier& normal_vs_rest, SubClassifier& glaucoma_vs_rest,
                                          const Dataset& images, int batch_size = 16);

// Softmax probabilities [N, C] of `net` in eval mode, batched.
std::vector<std::vector<double>> predict_probabilities(SubClassifier& net, const Dataset& images,
                                                       int batch_size = 16);

// Stacks images[indices] into one [B,3,H,W] batch.
Tensor stack_batch(const Dataset& images, std::span<const std::size_t> indices);

}  // namespace ordirank
