#include "rupp/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "rupp/error.hpp"

namespace rupp {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ShapeError("tensor rank must be >= 1");
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ShapeError("tensor rank must be >= 1");
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " data elements");
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

void ConvSpec::validate() const {
  if (kernel_h == 0 || kernel_w == 0) throw ShapeError("conv kernel dims must be positive");
  if (stride == 0) throw ShapeError("conv stride must be positive");
  if (dilation == 0) throw ShapeError("conv dilation must be >= 1");
}

std::size_t ConvSpec::out_extent(std::size_t in, std::size_t kernel) const {
  validate();
  const std::size_t span = dilation * (kernel - 1) + 1;
  const std::size_t padded = in + 2 * padding;
  if (padded < span) {
    throw ShapeError("conv window (extent " + std::to_string(span) + ") exceeds padded input extent " +
                     std::to_string(padded));
  }
  return (padded - span) / stride + 1;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace rupp
