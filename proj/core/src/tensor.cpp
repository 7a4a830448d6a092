#include "vclip/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "vclip/errors.hpp"

namespace vclip {

std::size_t shape_numel(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape dims, T fill) : dims_(std::move(dims)), data_(shape_numel(dims_), fill) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_string(dims_));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape dims, std::vector<T> values)
    : dims_(std::move(dims)), data_(std::move(values)) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_string(dims_));
  }
  if (shape_numel(dims_) != data_.size()) {
    throw ShapeError("tensor " + shape_string(dims_) + " cannot hold " +
                     std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape dims) const {
  if (shape_numel(dims) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
  }
  Tensor out(std::move(dims), data_);
  out.requires_grad_ = requires_grad_;
  return out;
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace vclip
