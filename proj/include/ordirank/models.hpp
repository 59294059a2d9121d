#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ordirank/autograd.hpp"

namespace ordirank {

enum class HeadKind {
  kGapSoftmax,       // conv body -> GAP -> bias-free dense; CAM-compatible
  kGapFcBnDropout,   // conv body -> GAP -> dense -> batch_norm -> relu -> dropout -> dense
};

std::string_view head_name(HeadKind head);
HeadKind parse_head(std::string_view name);

/// Network shape. Each block is `convs_per_block` 3x3 conv+relu layers
/// followed by a 2x2 stride-2 max-pool, so the feature map side is
/// input_size / 2^blocks.
struct ArchSpec {
  int input_size = 64;
  int input_channels = 3;
  std::vector<int> block_channels{8, 16, 32};
  int convs_per_block = 2;
  int num_outputs = 2;
  HeadKind head = HeadKind::kGapSoftmax;
  int fc_size = 256;
  double dropout_rate = 0.5;

  // Throws ConfigError when the final feature map would be smaller than 2x2 or a field is out of range.
  void validate() const;
  int feature_size() const;
  int feature_channels() const { return block_channels.back(); }

  // key=value lines; parse(serialize()) == *this.
  std::string serialize() const;
  static ArchSpec parse(std::string_view text);

  bool operator==(const ArchSpec&) const = default;
};

// Which ordinal split a binary sub-classifier learns. kFlat is the multi-class baseline.
enum class Split : int {
  kFlat = 0,
  kNormalVsRest = 1,    // (N)-(SG)
  kGlaucomaVsRest = 2,  // (NS)-(G)
};

std::string_view split_name(Split split);

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;    // [N, num_outputs]
  BasicTensor<T> features;  // [N, K, Hf, Wf], the layer feeding global average pooling
};

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
  bool trainable = true;
};

template <typename T>
class BasicSubClassifier {
 public:
  // Allocates zero-filled parameters; use build_stage1_net / build_stage2_net for initialized nets.
  BasicSubClassifier(ArchSpec arch, Split split);

  // He-uniform weights, zero biases, BN gamma=1 beta=0, running var 1.
  void initialize(std::uint64_t seed);

  const ArchSpec& arch() const { return arch_; }
  Split split() const { return split_; }

  // `rng` is required only for train-mode forward passes through dropout.
  ForwardResult<T> forward(Tape<T>& tape, const BasicTensor<T>& x, Mode mode, Rng* rng = nullptr);

  // Parameters and BN running statistics in a fixed order.
  std::vector<NamedTensor<T>> state() const;
  std::vector<BasicTensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Softmax-layer weights [K, num_outputs]; only meaningful for the GAP-softmax head.
  const BasicTensor<T>& output_weight() const { return out_w_; }

  // Copies values by name. Throws DimensionError on a missing name or shape mismatch.
  void load_state(const std::vector<NamedTensor<T>>& values);

  BasicSubClassifier clone() const;
  template <typename U>
  BasicSubClassifier<U> cast() const {
    BasicSubClassifier<U> out(arch_, split_);
    std::vector<NamedTensor<U>> converted;
    for (const auto& nt : state()) converted.push_back({nt.name, nt.tensor.template cast<U>(), nt.trainable});
    out.load_state(converted);
    return out;
  }

  // FNV-1a over the raw bytes of every state tensor.
  std::uint64_t fingerprint() const;

 private:
  struct Conv {
    BasicTensor<T> weight;
    BasicTensor<T> bias;
  };

  ArchSpec arch_;
  Split split_;
  std::vector<Conv> convs_;
  BasicTensor<T> fc_w_, fc_b_, bn_gamma_, bn_beta_;
  BatchNormState<T> bn_;
  BasicTensor<T> out_w_, out_b_;
};

using SubClassifier = BasicSubClassifier<float>;

extern template class BasicSubClassifier<float>;
extern template class BasicSubClassifier<double>;

// Conv body with the bias-free GAP-softmax head. Throws ConfigError unless head == kGapSoftmax.
SubClassifier build_stage1_net(const ArchSpec& spec, Split split, std::uint64_t seed);
// Conv body with the FC + batch-norm + dropout head. Throws ConfigError unless head == kGapFcBnDropout.
SubClassifier build_stage2_net(const ArchSpec& spec, Split split, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Optimization

struct RmsPropSettings {
  double rho = 0.9;
  double eps = 1e-8;
};

// s <- rho*s + (1-rho)*g^2 ; p <- p - lr*g/(sqrt(s)+eps)
template <typename T>
void rmsprop_step(std::span<T> params, std::span<const T> grads, std::span<T> state, double lr,
                  const RmsPropSettings& settings = {});

// Holds per-parameter mean-square accumulators for one model.
class RmsProp {
 public:
  explicit RmsProp(RmsPropSettings settings = {}) : settings_(settings) {}
  // Parameters without a gradient buffer are skipped.
  void step(std::vector<Tensor>& params, double lr);

 private:
  RmsPropSettings settings_;
  std::vector<std::vector<float>> state_;
};

// initial * decay^epoch. Throws ArgumentError on negative epoch.
double lr_at_epoch(double initial, int epoch, double decay = 0.9);

}  // namespace ordirank
