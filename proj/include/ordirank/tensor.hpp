#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "ordirank/errors.hpp"

namespace ordirank {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Vectorized kernels pick their peel/tail split from
// the buffer address, so a fixed alignment keeps float results bit-identical
// from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

/**
 * Dense row-major n-dimensional array with an optional gradient buffer.
 *
 * A tensor is a shared handle: copies alias the same storage, which is how
 * the autodiff tape and a model refer to one parameter. Use clone() for a
 * deep copy. Image batches use (N, C, H, W) order.
 */
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl_->data.size(); }
  bool empty() const { return impl_->data.empty(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  const Buffer<T>& values() const { return impl_->data; }

  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  T at(std::initializer_list<std::size_t> index) const;

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();
  // Allocates a zero gradient buffer if none exists.
  void ensure_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  // Deep copy with a different shape of equal element count.
  BasicTensor reshaped(Shape shape) const;
  BasicTensor clone() const;
  template <typename U>
  BasicTensor<U> cast() const;

  bool all_finite() const;
  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

  struct Impl {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;
    bool requires_grad = false;
    // Identity of the recording tape that produced this tensor; 0 for leaves.
    std::uint64_t tape_id = 0;
  };
  using ImplPtr = std::shared_ptr<Impl>;

  const ImplPtr& impl() const { return impl_; }
  explicit BasicTensor(ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  ImplPtr impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> out(impl_->data.begin(), impl_->data.end());
  BasicTensor<U> t(impl_->shape, std::move(out));
  t.set_requires_grad(impl_->requires_grad);
  return t;
}

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace ordirank
