#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>
#include <vector>

#include "rupp/tensor.hpp"

namespace rupp {

enum class UnaryOp { relu, sigmoid, neg, exp, log, square };
enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { sum, mean, max };

template <typename T>
Tensor<T> map_unary(UnaryOp op, const Tensor<T>& x);

// Shapes must match, or `b` is rank-1 of length C broadcast over axis 1 of a rank-4 `a`.
template <typename T>
Tensor<T> broadcast_binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

// axes == nullopt reduces everything to shape {1}. Sums accumulate in double,
// sequentially in row-major order, so results do not depend on scheduling.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, const std::optional<std::vector<std::size_t>>& axes,
                 bool keepdims = false);

// Reference direct-loop cross-correlation with zero padding.
template <typename T>
Tensor<T> conv2d_naive(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec);

// Same contract as conv2d_naive, lowered to im2col + matrix multiply.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

// Gradients of conv2d w.r.t. its input, weight and bias given d(out).
// Any of the three can be skipped by passing the corresponding flag false.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& weight,
                             const ConvSpec& spec, bool need_input, bool need_weight, bool need_bias);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  // Flat input index of the selected element, one per output element.
  std::vector<std::size_t> argmax;
};

// 2x2 window, stride 2. H and W must be even.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x);

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const Shape& input_shape);

// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Tensor<T> upsample2d(const Tensor<T>& x, std::size_t factor = 2);

template <typename T>
Tensor<T> upsample2d_backward(const Tensor<T>& grad_out, std::size_t factor = 2);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Channels [begin, end) of a rank-4 tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);

namespace detail {

// col: (C_in*kh*kw, H_out*W_out) for sample n.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, const ConvSpec& spec,
            std::size_t out_h, std::size_t out_w, T* col);

// Scatter-add inverse of im2col.
template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t height, std::size_t width, const ConvSpec& spec,
            std::size_t out_h, std::size_t out_w, T* image);

}  // namespace detail

}  // namespace rupp
