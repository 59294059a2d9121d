#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ordirank/random.hpp"
#include "ordirank/tensor.hpp"

namespace ordirank {

enum class Mode { kTrain, kEval };

template <typename T>
struct TapeNode {
  std::string_view op;
  std::vector<typename BasicTensor<T>::ImplPtr> inputs;
  typename BasicTensor<T>::ImplPtr output;
  // Reads output->grad and accumulates into the grads of inputs that require them.
  std::function<void()> backward;
};

/**
 * Reverse-mode autodiff tape. Ops append nodes in creation order, so the node
 * list is already topologically sorted; backward() replays it in reverse.
 *
 * A tape built with recording=false is an inference context: ops compute
 * values only and nothing is retained.
 */
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const TapeNode<T>> nodes() const { return nodes_; }

  // True when an op with these inputs must be recorded.
  bool wants(std::initializer_list<const BasicTensor<T>*> inputs) const;

  // Registers `out` as produced by `op`. Marks it as requiring grad.
  void record(std::string_view op, std::vector<typename BasicTensor<T>::ImplPtr> inputs, BasicTensor<T>& out,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and propagates. Leaf gradients accumulate across
  // calls until zero_grad(); intermediate gradients are reset on every call.
  void backward(const BasicTensor<T>& loss);

  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  bool recording_;
  std::uint64_t id_;
  std::vector<TapeNode<T>> nodes_;
  std::size_t last_visits_ = 0;
};

template <typename T>
struct BatchNormState {
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);
};

template <typename T>
struct SoftmaxXent {
  BasicTensor<T> loss;   // scalar, mean over the batch
  BasicTensor<T> probs;  // [N, C], not differentiable
};

// Zero-padded 2-D cross-correlation (no kernel flip).
template <typename T>
BasicTensor<T> conv2d(Tape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                      const BasicTensor<T>* bias, int stride, int pad);

// Trailing partial windows are dropped. Gradient goes to the first maximum in row-major order.
template <typename T>
BasicTensor<T> max_pool2d(Tape<T>& tape, const BasicTensor<T>& x, int window, int stride);

// [N,K,H,W] -> [N,K], spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(Tape<T>& tape, const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> dense(Tape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>* bias);

template <typename T>
BasicTensor<T> relu(Tape<T>& tape, const BasicTensor<T>& x);

// Per-channel normalization of [N,C] or [N,C,H,W]; statistics over every axis but C.
template <typename T>
BasicTensor<T> batch_norm(Tape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, BatchNormState<T>& state, Mode mode);

// Inverted dropout. Eval mode (or rate 0) returns x unchanged.
template <typename T>
BasicTensor<T> dropout(Tape<T>& tape, const BasicTensor<T>& x, double rate, Mode mode, Rng& rng);

template <typename T>
SoftmaxXent<T> softmax_cross_entropy(Tape<T>& tape, const BasicTensor<T>& logits, std::span<const int> targets);

// Row-wise softmax without taping.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
BasicTensor<T> sum(Tape<T>& tape, const BasicTensor<T>& x);

// Elementwise product of equal-shape tensors.
template <typename T>
BasicTensor<T> mul(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace ordirank
