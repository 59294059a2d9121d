#include "ordirank/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ordirank {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor() : impl_(std::make_shared<Impl>()) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (impl_->data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != impl_->shape.size()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw DimensionError("index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (impl_->grad.empty()) throw StateError("tensor has no gradient");
  return impl_->grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  ensure_grad();
  return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
void BasicTensor<T>::ensure_grad() {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != impl_->data.size()) {
    throw DimensionError("cannot reshape " + shape_str(impl_->shape) + " to " + shape_str(shape));
  }
  auto view = std::make_shared<Impl>(*impl_);
  view->shape = std::move(shape);
  view->grad.clear();
  view->tape_id = 0;
  return BasicTensor(view);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  auto copy = std::make_shared<Impl>(*impl_);
  copy->tape_id = 0;
  return BasicTensor(copy);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace ordirank
