#include "ordirank/camroi.hpp"

#include <algorithm>
#include <cmath>

#include "ordirank/imaging.hpp"

namespace ordirank {

namespace {

Tensor mask_from_unit(const FeatureTap& tap, int unit, std::size_t height, std::size_t width) {
  return normalize_mask(upsample_bilinear(compute_cam(tap, unit).values, height, width));
}

}  // namespace

std::vector<FeatureTap> extract_feature_taps(SubClassifier& net, const Tensor& batch) {
  if (net.arch().head != HeadKind::kGapSoftmax) {
    throw ConfigError("extract_feature_taps: CAM needs the gap_softmax head");
  }
  Tape<float> tape(false);
  auto out = net.forward(tape, batch, Mode::kEval);
  const std::size_t n = out.features.dim(0), k = out.features.dim(1);
  const std::size_t fh = out.features.dim(2), fw = out.features.dim(3);
  const std::size_t c = out.logits.dim(1);
  std::vector<FeatureTap> taps;
  taps.reserve(n);
  const Tensor weights = net.output_weight().clone();
  for (std::size_t i = 0; i < n; ++i) {
    const auto feat = out.features.data().subspan(i * k * fh * fw, k * fh * fw);
    const auto scores = out.logits.data().subspan(i * c, c);
    taps.push_back({Tensor(Shape{k, fh, fw}, std::vector<float>(feat.begin(), feat.end())), weights,
                    Tensor(Shape{c}, std::vector<float>(scores.begin(), scores.end()))});
  }
  return taps;
}

Cam compute_cam(const FeatureTap& tap, int class_id) {
  if (tap.features.rank() != 3 || tap.weights.rank() != 2 || tap.weights.dim(0) != tap.features.dim(0)) {
    throw DimensionError("compute_cam: features " + shape_str(tap.features.shape()) + " and weights " +
                         shape_str(tap.weights.shape()) + " are inconsistent");
  }
  const std::size_t k = tap.features.dim(0), fh = tap.features.dim(1), fw = tap.features.dim(2);
  const std::size_t classes = tap.weights.dim(1);
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= classes) {
    throw ArgumentError("compute_cam: class " + std::to_string(class_id) + " outside [0, " +
                        std::to_string(classes) + ")");
  }
  Cam cam{Tensor(Shape{fh, fw}), class_id};
  auto out = cam.values.mutable_data();
  for (std::size_t ch = 0; ch < k; ++ch) {
    const float w = tap.weights[ch * classes + static_cast<std::size_t>(class_id)];
    const auto f = tap.features.data().subspan(ch * fh * fw, fh * fw);
    for (std::size_t i = 0; i < fh * fw; ++i) out[i] += w * f[i];
  }
  return cam;
}

Tensor normalize_mask(const Tensor& values) {
  if (values.empty()) throw DimensionError("normalize_mask: empty map");
  if (!values.all_finite()) throw NumericError("normalize_mask: map contains NaN or Inf");
  const auto [lo_it, hi_it] = std::minmax_element(values.data().begin(), values.data().end());
  const float lo = *lo_it, hi = *hi_it;
  Tensor out(values.shape());
  auto dst = out.mutable_data();
  if (hi == lo) {
    std::fill(dst.begin(), dst.end(), 0.5f);
    return out;
  }
  const float range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    dst[i] = std::clamp((values[i] - lo) / range, 0.0f, 1.0f);
  }
  return out;
}

Tensor normalize_mask(const Cam& cam) { return normalize_mask(cam.values); }

Tensor upsample_bilinear(const Tensor& mask, std::size_t height, std::size_t width) {
  if (mask.rank() != 2) throw DimensionError("upsample_bilinear: expected a 2-D map, got " + shape_str(mask.shape()));
  const std::size_t sh = mask.dim(0), sw = mask.dim(1);
  if (height < sh || width < sw) {
    throw ArgumentError("upsample_bilinear: target " + std::to_string(height) + "x" + std::to_string(width) +
                        " is smaller than source " + std::to_string(sh) + "x" + std::to_string(sw));
  }
  Tensor out(Shape{height, width});
  imaging::resample_corner_aligned(mask.data(), sh, sw, out.mutable_data(), height, width);
  return out;
}

MaskFilter select_mask(RankLabel prediction, const FeatureTap& normal_vs_rest, const FeatureTap& glaucoma_vs_rest,
                       std::size_t height, std::size_t width) {
  if (normal_vs_rest.features.shape() != glaucoma_vs_rest.features.shape()) {
    throw DimensionError("select_mask: tap feature shapes differ (" + shape_str(normal_vs_rest.features.shape()) +
                         " vs " + shape_str(glaucoma_vs_rest.features.shape()) + ")");
  }
  switch (prediction.rank) {
    case 0:
      return {mask_from_unit(normal_vs_rest, 0, height, width), MaskSource::kNormalUnit};
    case 2:
      return {mask_from_unit(glaucoma_vs_rest, 1, height, width), MaskSource::kGlaucomaUnit};
    case 1: {
      const Tensor a = mask_from_unit(normal_vs_rest, 1, height, width);
      const Tensor b = mask_from_unit(glaucoma_vs_rest, 0, height, width);
      Tensor mean(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) mean[i] = std::clamp(0.5f * (a[i] + b[i]), 0.0f, 1.0f);
      return {mean, MaskSource::kSuspiciousAverage};
    }
    default:
      throw ArgumentError("select_mask: rank " + std::to_string(prediction.rank) + " is not a three-class rank");
  }
}

RoiImage fuse_roi(const Tensor& image, const MaskFilter& mask, RankLabel predicted) {
  if (image.rank() != 3 || mask.values.rank() != 2 || image.dim(1) != mask.values.dim(0) ||
      image.dim(2) != mask.values.dim(1)) {
    throw DimensionError("fuse_roi: image " + shape_str(image.shape()) + " and mask " +
                         shape_str(mask.values.shape()) + " differ in size");
  }
  const std::size_t plane = image.dim(1) * image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = image[c * plane + i] * mask.values[i];
  }
  return {out, predicted, mask.source};
}

}  // namespace ordirank
