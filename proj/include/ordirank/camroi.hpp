#pragma once

#include <cstddef>
#include <vector>

#include "ordirank/models.hpp"
#include "ordirank/ordinal.hpp"
#include "ordirank/tensor.hpp"

namespace ordirank {

/// What a GAP-softmax network saw for one image: the pre-GAP activations
/// f_k(x,y), the softmax weights w_k^c and the pre-softmax scores S_c.
/// With a bias-free head, scores[c] == sum_k weights[k,c] * mean_xy features[k].
struct FeatureTap {
  Tensor features;  // [K, Hf, Wf]
  Tensor weights;   // [K, C]
  Tensor scores;    // [C]
};

// Class activation map M_c(x,y) = sum_k w_k^c f_k(x,y).
struct Cam {
  Tensor values;  // [Hf, Wf]
  int class_id = 0;
};

enum class MaskSource {
  kNormalUnit,         // unit "N" of (N)-(SG)
  kGlaucomaUnit,       // unit "G" of (NS)-(G)
  kSuspiciousAverage,  // mean of unit "SG" of (N)-(SG) and unit "NS" of (NS)-(G)
};

struct MaskFilter {
  Tensor values;  // [H, W], in [0, 1]
  MaskSource source = MaskSource::kNormalUnit;
};

struct RoiImage {
  Tensor values;  // [3, H, W]
  RankLabel predicted;
  MaskSource source = MaskSource::kNormalUnit;
};

// Runs `net` in eval mode over a batch [N,3,H,W] and returns one tap per image.
// Throws ConfigError unless the net has the GAP-softmax head.
std::vector<FeatureTap> extract_feature_taps(SubClassifier& net, const Tensor& batch);

// Throws ArgumentError when class_id is outside [0, C).
Cam compute_cam(const FeatureTap& tap, int class_id);

// Min-max scaling to [0,1]; a constant map becomes all 0.5. Throws NumericError on NaN/Inf.
Tensor normalize_mask(const Tensor& values);
Tensor normalize_mask(const Cam& cam);

// Corner-aligned bilinear enlargement of a [h, w] map. Throws ArgumentError if the target is smaller.
Tensor upsample_bilinear(const Tensor& mask, std::size_t height, std::size_t width);

/**
 * Chooses the mask filter for an image from its stage-1 prediction.
 *
 *   normal     -> CAM of unit 0 ("N") of the (N)-(SG) net
 *   glaucoma   -> CAM of unit 1 ("G") of the (NS)-(G) net
 *   suspicious -> mean of unit 1 ("SG") of (N)-(SG) and unit 0 ("NS") of (NS)-(G)
 *
 * Each CAM is upsampled to (height, width) and min-max normalized before use;
 * the suspicious mean is clamped to [0, 1]. Both taps must come from the same input.
 */
MaskFilter select_mask(RankLabel prediction, const FeatureTap& normal_vs_rest, const FeatureTap& glaucoma_vs_rest,
                       std::size_t height, std::size_t width);

// out[c,y,x] = image[c,y,x] * mask[y,x]. Throws DimensionError on size mismatch.
RoiImage fuse_roi(const Tensor& image, const MaskFilter& mask, RankLabel predicted = {});

}  // namespace ordirank
