#include "ordirank/ensemble.hpp"

#include <algorithm>
#include <numeric>

namespace ordirank {

RankPrediction rank_from_probabilities(double normal_vs_rest, double glaucoma_vs_rest) {
  RankPrediction out;
  out.positive = {normal_vs_rest, glaucoma_vs_rest};
  out.rank = aggregate({vote(normal_vs_rest), vote(glaucoma_vs_rest)});
  return out;
}

Tensor stack_batch(const Dataset& images, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("stack_batch: empty batch");
  const Shape& first = images.at(indices[0]).pixels.shape();
  const std::size_t per = shape_numel(first);
  Tensor batch(Shape{indices.size(), first.at(0), first.at(1), first.at(2)});
  auto dst = batch.mutable_data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& px = images.at(indices[b]).pixels;
    if (px.shape() != first) {
      throw DimensionError("stack_batch: image " + images[indices[b]].id + " has shape " + shape_str(px.shape()) +
                           ", expected " + shape_str(first));
    }
    std::copy(px.data().begin(), px.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return batch;
}

std::vector<std::vector<double>> predict_probabilities(SubClassifier& net, const Dataset& images, int batch_size) {
  if (batch_size < 1) throw ArgumentError("predict_probabilities: batch_size must be >= 1");
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape<float> tape(false);
    const auto result = net.forward(tape, stack_batch(images, idx), Mode::kEval);
    const Tensor probs = softmax(result.logits);
    const std::size_t c = probs.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.emplace_back(probs.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                       probs.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
    }
  }
  return out;
}

RankPrediction predict_rank(SubClassifier& normal_vs_rest, SubClassifier& glaucoma_vs_rest, const Tensor& image) {
  Dataset one{LabeledImage{image, {}, "", std::nullopt}};
  return predict_ranks(normal_vs_rest, glaucoma_vs_rest, one, 1).front();
}

std::vector<RankPrediction> predict_ranks(SubClassifier& normal_vs_rest, SubClassifier& glaucoma_vs_rest,
                                          const Dataset& images, int batch_size) {
  const auto first = predict_probabilities(normal_vs_rest, images, batch_size);
  const auto second = predict_probabilities(glaucoma_vs_rest, images, batch_size);
  std::vector<RankPrediction> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(rank_from_probabilities(first[i][1], second[i][1]));
  return out;
}

}  // namespace ordirank
