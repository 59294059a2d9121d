#include "ordirank/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace ordirank {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

template <typename T>
bool needs_grad(const typename BasicTensor<T>::ImplPtr& p) {
  return p->requires_grad;
}

template <typename T>
T* grad_ptr(const typename BasicTensor<T>::ImplPtr& p) {
  if (p->grad.size() != p->data.size()) p->grad.assign(p->data.size(), T(0));
  return p->grad.data();
}

// Unrolls one image [C,H,W] into columns [C*kh*kw, Ho*Wo].
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, int stride, int pad, std::size_t out_h, std::size_t out_w, T* cols) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ki);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(height)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = img + (c * height + static_cast<std::size_t>(iy)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kj);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
                std::size_t kw, int stride, int pad, std::size_t out_h, std::size_t out_w, T* img) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ki);
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          T* dst = img + (c * height + static_cast<std::size_t>(iy)) * width;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kj);
            if (ix >= 0 && ix < static_cast<long>(width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Tape<T>::Tape(bool recording) : recording_(recording), id_(next_tape_id.fetch_add(1)) {}

template <typename T>
bool Tape<T>::wants(std::initializer_list<const BasicTensor<T>*> inputs) const {
  if (!recording_) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<typename BasicTensor<T>::ImplPtr> inputs, BasicTensor<T>& out,
                     std::function<void()> backward) {
  out.set_requires_grad(true);
  out.impl()->tape_id = id_;
  nodes_.push_back(TapeNode<T>{op, std::move(inputs), out.impl(), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.impl()->tape_id != id_ || !recording_) {
    throw StateError("backward: tensor was not produced by this tape");
  }
  if (loss.size() != 1) throw DimensionError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  for (auto& node : nodes_) {
    node.output->grad.assign(node.output->data.size(), T(0));
  }
  loss.impl()->grad[0] = T(1);
  last_visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
    ++last_visits_;
  }
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
BasicTensor<T> conv2d(Tape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                      const BasicTensor<T>* bias, int stride, int pad) {
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (pad < 0) throw ArgumentError("conv2d: pad must be >= 0");
  require_rank(x, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (kh > h + 2 * static_cast<std::size_t>(pad) || kw > w + 2 * static_cast<std::size_t>(pad)) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(cout) + "]");
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  const std::size_t ckk = cin * kh * kw;
  const std::size_t plane = oh * ow;

  BasicTensor<T> out(Shape{n, cout, oh, ow});
  const bool taped = tape.wants({&x, &kernel, bias});
  Buffer<T> cols(taped ? n * ckk * plane : ckk * plane);

  ConstMatMap<T> kmat(kernel.data().data(), cout, ckk);
  for (std::size_t i = 0; i < n; ++i) {
    T* c = cols.data() + (taped ? i * ckk * plane : 0);
    im2col(x.data().data() + i * cin * h * w, cin, h, w, kh, kw, stride, pad, oh, ow, c);
    MatMap<T> o(out.mutable_data().data() + i * cout * plane, cout, plane);
    o.noalias() = kmat * ConstMatMap<T>(c, ckk, plane);
    if (bias != nullptr) {
      for (std::size_t oc = 0; oc < cout; ++oc) o.row(oc).array() += (*bias)[oc];
    }
  }

  if (taped) {
    auto xi = x.impl();
    auto ki = kernel.impl();
    auto bi = bias != nullptr ? bias->impl() : nullptr;
    auto oi = out.impl();
    std::vector<typename BasicTensor<T>::ImplPtr> inputs{xi, ki};
    if (bi) inputs.push_back(bi);
    tape.record("conv2d", std::move(inputs), out,
                [=, cols = std::move(cols)]() {
                  ConstMatMap<T> kmat(ki->data.data(), cout, ckk);
                  RowMat<T> dcols;
                  for (std::size_t i = 0; i < n; ++i) {
                    ConstMatMap<T> dy(oi->grad.data() + i * cout * plane, cout, plane);
                    ConstMatMap<T> c(cols.data() + i * ckk * plane, ckk, plane);
                    if (needs_grad<T>(ki)) {
                      MatMap<T> dk(grad_ptr<T>(ki), cout, ckk);
                      dk.noalias() += dy * c.transpose();
                    }
                    if (bi && needs_grad<T>(bi)) {
                      T* db = grad_ptr<T>(bi);
                      for (std::size_t oc = 0; oc < cout; ++oc) db[oc] += dy.row(oc).sum();
                    }
                    if (needs_grad<T>(xi)) {
                      dcols.noalias() = kmat.transpose() * dy;
                      col2im_add(dcols.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                                 grad_ptr<T>(xi) + i * cin * h * w);
                    }
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------
// max_pool2d

template <typename T>
BasicTensor<T> max_pool2d(Tape<T>& tape, const BasicTensor<T>& x, int window, int stride) {
  if (window < 1 || stride < 1) throw ArgumentError("max_pool2d: window and stride must be >= 1");
  require_rank(x, 4, "max_pool2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto win = static_cast<std::size_t>(window);
  if (win > h || win > w) throw DimensionError("max_pool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t oh = (h - win) / stride + 1;
  const std::size_t ow = (w - win) / stride + 1;
  BasicTensor<T> out(Shape{n, c, oh, ow});
  const bool taped = tape.wants({&x});
  std::vector<std::size_t> argmax(taped ? out.size() : 0);

  const T* src = x.data().data();
  T* dst = out.mutable_data().data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* p = src + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < win; ++dy) {
          for (std::size_t dx = 0; dx < win; ++dx) {
            const std::size_t idx = (oy * stride + dy) * w + ox * stride + dx;
            if (p[idx] > p[best] || (std::isnan(p[idx]) && !std::isnan(p[best]))) best = idx;
          }
        }
        dst[o] = p[best];
        if (taped) argmax[o] = plane * h * w + best;
      }
    }
  }
  if (taped) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record("max_pool2d", {xi}, out, [xi, oi, argmax = std::move(argmax)]() {
      T* dx = grad_ptr<T>(xi);
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += oi->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// global_avg_pool

template <typename T>
BasicTensor<T> global_avg_pool(Tape<T>& tape, const BasicTensor<T>& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t n = x.dim(0), k = x.dim(1), area = x.dim(2) * x.dim(3);
  if (area == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  BasicTensor<T> out(Shape{n, k});
  const T* src = x.data().data();
  for (std::size_t i = 0; i < n * k; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < area; ++j) acc += src[i * area + j];
    out[i] = acc / static_cast<T>(area);
  }
  if (tape.wants({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record("global_avg_pool", {xi}, out, [xi, oi, n, k, area]() {
      T* dx = grad_ptr<T>(xi);
      const T scale = T(1) / static_cast<T>(area);
      for (std::size_t i = 0; i < n * k; ++i) {
        const T g = oi->grad[i] * scale;
        for (std::size_t j = 0; j < area; ++j) dx[i * area + j] += g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense

template <typename T>
BasicTensor<T> dense(Tape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>* bias) {
  require_rank(x, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  const std::size_t n = x.dim(0), d = x.dim(1), m = weight.dim(1);
  if (weight.dim(0) != d) {
    throw DimensionError("dense: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != m)) {
    throw DimensionError("dense: bias must have shape [" + std::to_string(m) + "]");
  }
  BasicTensor<T> out(Shape{n, m});
  MatMap<T> o(out.mutable_data().data(), n, m);
  o.noalias() = ConstMatMap<T>(x.data().data(), n, d) * ConstMatMap<T>(weight.data().data(), d, m);
  if (bias != nullptr) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) o(i, j) += (*bias)[j];
    }
  }
  if (tape.wants({&x, &weight, bias})) {
    auto xi = x.impl();
    auto wi = weight.impl();
    auto bi = bias != nullptr ? bias->impl() : nullptr;
    auto oi = out.impl();
    std::vector<typename BasicTensor<T>::ImplPtr> inputs{xi, wi};
    if (bi) inputs.push_back(bi);
    tape.record("dense", std::move(inputs), out, [=]() {
      ConstMatMap<T> dy(oi->grad.data(), n, m);
      if (needs_grad<T>(xi)) {
        MatMap<T>(grad_ptr<T>(xi), n, d).noalias() += dy * ConstMatMap<T>(wi->data.data(), d, m).transpose();
      }
      if (needs_grad<T>(wi)) {
        MatMap<T>(grad_ptr<T>(wi), d, m).noalias() += ConstMatMap<T>(xi->data.data(), n, d).transpose() * dy;
      }
      if (bi && needs_grad<T>(bi)) {
        T* db = grad_ptr<T>(bi);
        for (std::size_t j = 0; j < m; ++j) db[j] += dy.col(j).sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
BasicTensor<T> relu(Tape<T>& tape, const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* src = x.data().data();
  T* dst = out.mutable_data().data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > T(0) || std::isnan(src[i]) ? src[i] : T(0);  // NaN passes through
  if (tape.wants({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record("relu", {xi}, out, [xi, oi]() {
      T* dx = grad_ptr<T>(xi);
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        if (xi->data[i] > T(0)) dx[i] += oi->grad[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch_norm

template <typename T>
BasicTensor<T> batch_norm(Tape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, BatchNormState<T>& state, Mode mode) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw DimensionError("batch_norm: input must be [N,C] or [N,C,H,W], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  for (const BasicTensor<T>* t : {&gamma, &beta, static_cast<const BasicTensor<T>*>(&state.running_mean),
                                  static_cast<const BasicTensor<T>*>(&state.running_var)}) {
    if (t->rank() != 1 || t->dim(0) != c) throw DimensionError("batch_norm: per-channel tensors must be [C]");
  }
  const std::size_t count = n * inner;
  if (count == 0) throw DimensionError("batch_norm: empty batch");

  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::kTrain) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data().data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) acc += p[j];
      }
      const T mu = acc / static_cast<T>(count);
      T var = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data().data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) var += (p[j] - mu) * (p[j] - mu);
      }
      var /= static_cast<T>(count);
      mean[ch] = mu;
      inv_std[ch] = T(1) / std::sqrt(var + state.eps);
      auto& rm = state.running_mean[ch];
      auto& rv = state.running_var[ch];
      rm = state.momentum * rm + (T(1) - state.momentum) * mu;
      rv = state.momentum * rv + (T(1) - state.momentum) * var;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  BasicTensor<T> out(x.shape());
  std::vector<T> xhat(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        const T xh = (x[base + j] - mean[ch]) * inv_std[ch];
        xhat[base + j] = xh;
        out[base + j] = gamma[ch] * xh + beta[ch];
      }
    }
  }

  if (tape.wants({&x, &gamma, &beta})) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    const bool train = mode == Mode::kTrain;
    tape.record("batch_norm", {xi, gi, bi}, out,
                [=, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
                  const T* dy = oi->grad.data();
                  std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      const std::size_t base = (i * c + ch) * inner;
                      for (std::size_t j = 0; j < inner; ++j) {
                        sum_dy[ch] += dy[base + j];
                        sum_dy_xhat[ch] += dy[base + j] * xhat[base + j];
                      }
                    }
                  }
                  if (needs_grad<T>(gi)) {
                    T* dg = grad_ptr<T>(gi);
                    for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_dy_xhat[ch];
                  }
                  if (needs_grad<T>(bi)) {
                    T* db = grad_ptr<T>(bi);
                    for (std::size_t ch = 0; ch < c; ++ch) db[ch] += sum_dy[ch];
                  }
                  if (!needs_grad<T>(xi)) return;
                  T* dx = grad_ptr<T>(xi);
                  const T m = static_cast<T>(count);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      const std::size_t base = (i * c + ch) * inner;
                      const T g = gi->data[ch];
                      for (std::size_t j = 0; j < inner; ++j) {
                        if (train) {
                          dx[base + j] += g * inv_std[ch] / m *
                                          (m * dy[base + j] - sum_dy[ch] - xhat[base + j] * sum_dy_xhat[ch]);
                        } else {
                          dx[base + j] += g * inv_std[ch] * dy[base + j];
                        }
                      }
                    }
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout

template <typename T>
BasicTensor<T> dropout(Tape<T>& tape, const BasicTensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout: rate must be in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (auto& m : mask) m = uni(rng) < rate ? T(0) : scale;
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  if (tape.wants({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record("dropout", {xi}, out, [xi, oi, mask = std::move(mask)]() {
      T* dx = grad_ptr<T>(xi);
      for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += oi->grad[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "softmax", "logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  BasicTensor<T> probs(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data().data() + i * c;
    T* p = probs.mutable_data().data() + i * c;
    const T zmax = *std::max_element(z, z + c);
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - zmax);
      denom += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= denom;
  }
  return probs;
}

template <typename T>
SoftmaxXent<T> softmax_cross_entropy(Tape<T>& tape, const BasicTensor<T>& logits, std::span<const int> targets) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) throw DimensionError("softmax_cross_entropy: one target per row required");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw ArgumentError("softmax_cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                          std::to_string(c) + ")");
    }
  }
  BasicTensor<T> probs = softmax(logits);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data().data() + i * c;
    const T zmax = *std::max_element(z, z + c);
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - zmax);
    total += -(z[targets[i]] - zmax - std::log(denom));
  }
  auto loss = BasicTensor<T>::scalar(total / static_cast<T>(n));
  if (tape.wants({&logits})) {
    auto li = logits.impl();
    auto pi = probs.impl();
    auto oi = loss.impl();
    std::vector<int> tgt(targets.begin(), targets.end());
    tape.record("softmax_cross_entropy", {li}, loss, [=, tgt = std::move(tgt)]() {
      T* dz = grad_ptr<T>(li);
      const T g = oi->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const T onehot = static_cast<int>(j) == tgt[i] ? T(1) : T(0);
          dz[i * c + j] += g * (pi->data[i * c + j] - onehot);
        }
      }
    });
  }
  return {loss, probs};
}

// ---------------------------------------------------------------------------
// sum / mul

template <typename T>
BasicTensor<T> sum(Tape<T>& tape, const BasicTensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto out = BasicTensor<T>::scalar(acc);
  if (tape.wants({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record("sum", {xi}, out, [xi, oi]() {
      T* dx = grad_ptr<T>(xi);
      for (std::size_t i = 0; i < xi->data.size(); ++i) dx[i] += oi->grad[0];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  if (tape.wants({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record("mul", {ai, bi}, out, [ai, bi, oi]() {
      // Read both inputs before writing: a and b may alias.
      const std::size_t len = oi->data.size();
      std::vector<T> da(len), db(len);
      for (std::size_t i = 0; i < len; ++i) {
        da[i] = oi->grad[i] * bi->data[i];
        db[i] = oi->grad[i] * ai->data[i];
      }
      if (needs_grad<T>(ai)) {
        T* g = grad_ptr<T>(ai);
        for (std::size_t i = 0; i < len; ++i) g[i] += da[i];
      }
      if (needs_grad<T>(bi)) {
        T* g = grad_ptr<T>(bi);
        for (std::size_t i = 0; i < len; ++i) g[i] += db[i];
      }
    });
  }
  return out;
}

#define ORDIRANK_INSTANTIATE(T)                                                                               \
  template class Tape<T>;                                                                                     \
  template BasicTensor<T> conv2d(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*, \
                                 int, int);                                                                   \
  template BasicTensor<T> max_pool2d(Tape<T>&, const BasicTensor<T>&, int, int);                              \
  template BasicTensor<T> global_avg_pool(Tape<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> dense(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*); \
  template BasicTensor<T> relu(Tape<T>&, const BasicTensor<T>&);                                              \
  template BasicTensor<T> batch_norm(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                     const BasicTensor<T>&, BatchNormState<T>&, Mode);                        \
  template BasicTensor<T> dropout(Tape<T>&, const BasicTensor<T>&, double, Mode, Rng&);                       \
  template SoftmaxXent<T> softmax_cross_entropy(Tape<T>&, const BasicTensor<T>&, std::span<const int>);       \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> sum(Tape<T>&, const BasicTensor<T>&);                                               \
  template BasicTensor<T> mul(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);

ORDIRANK_INSTANTIATE(float)
ORDIRANK_INSTANTIATE(double)

#undef ORDIRANK_INSTANTIATE

}  // namespace ordirank
