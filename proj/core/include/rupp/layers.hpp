#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rupp/autodiff.hpp"

namespace rupp {

enum class Mode { train, eval };

/// Non-owning view of a module's trainable parameters and persistent buffers,
/// keyed by dotted path ("enc1.res.conv1.weight").
template <typename T>
struct NamedRefs {
  std::vector<std::pair<std::string, Parameter<T>*>> parameters;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;
};

// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) from a dedicated stream.
template <typename T>
void he_uniform_init(Tensor<T>& weight, std::size_t fan_in, std::uint64_t seed);

template <typename T>
class Conv2DLayer {
 public:
  Conv2DLayer() = default;
  Conv2DLayer(std::size_t in_channels, std::size_t out_channels, ConvSpec spec, bool with_bias);

  Variable<T> forward(Tape<T>& tape, const Variable<T>& x);
  void collect(const std::string& prefix, NamedRefs<T>& refs);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t fan_in() const { return in_channels() * spec.kernel_h * spec.kernel_w; }

  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
  ConvSpec spec;
};

template <typename T>
class BatchNorm2D {
 public:
  BatchNorm2D() = default;
  explicit BatchNorm2D(std::size_t channels, T momentum = T(0.9), T eps = T(1e-5));

  /// Train mode normalizes with batch statistics and folds them into the running
  /// estimates (running = momentum*running + (1-momentum)*batch). Eval mode uses
  /// the running estimates and leaves the layer untouched.
  Variable<T> forward(Tape<T>& tape, const Variable<T>& x, Mode mode);
  void collect(const std::string& prefix, NamedRefs<T>& refs);

  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);
};

// relu(batchnorm(conv(x)))
template <typename T>
Variable<T> conv_bn_relu(Tape<T>& tape, const Variable<T>& x, Conv2DLayer<T>& conv, BatchNorm2D<T>& bn, Mode mode);

/// Basic residual block: relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x)).
/// The shortcut is the identity when channel counts agree, else a 1x1 projection.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::size_t in_channels, std::size_t out_channels);

  Variable<T> forward(Tape<T>& tape, const Variable<T>& x, Mode mode);
  void collect(const std::string& prefix, NamedRefs<T>& refs);

  Conv2DLayer<T> conv1;
  BatchNorm2D<T> bn1;
  Conv2DLayer<T> conv2;
  BatchNorm2D<T> bn2;
  std::optional<Conv2DLayer<T>> shortcut;
};

/// Atrous spatial pyramid: a 1x1 branch plus one 3x3 branch per dilation
/// (padding = dilation, so spatial dims are preserved), concatenated in that
/// order and fused back to out_channels by a 1x1 convolution.
template <typename T>
class ASPPModule {
 public:
  ASPPModule() = default;
  ASPPModule(std::size_t in_channels, std::size_t out_channels, const std::vector<std::size_t>& dilations);

  Variable<T> forward(Tape<T>& tape, const Variable<T>& x);
  void collect(const std::string& prefix, NamedRefs<T>& refs);

  Conv2DLayer<T> pointwise;
  std::vector<Conv2DLayer<T>> dilated;
  Conv2DLayer<T> fuse;
};

/// Additive attention gate on a skip connection.
/// alpha = sigmoid(psi(relu(W_g(gate) + W_x(skip)))), output = skip * alpha.
template <typename T>
class AttentionGate {
 public:
  AttentionGate() = default;
  AttentionGate(std::size_t skip_channels, std::size_t gate_channels, std::size_t inter_channels);

  // (N,1,H,W) map in (0,1).
  Variable<T> attention(Tape<T>& tape, const Variable<T>& skip, const Variable<T>& gate);
  Variable<T> forward(Tape<T>& tape, const Variable<T>& skip, const Variable<T>& gate);
  void collect(const std::string& prefix, NamedRefs<T>& refs);

  Conv2DLayer<T> w_gate;
  Conv2DLayer<T> w_skip;
  Conv2DLayer<T> psi;
};

extern template class Conv2DLayer<float>;
extern template class Conv2DLayer<double>;
extern template class BatchNorm2D<float>;
extern template class BatchNorm2D<double>;
extern template class ResBlock<float>;
extern template class ResBlock<double>;
extern template class ASPPModule<float>;
extern template class ASPPModule<double>;
extern template class AttentionGate<float>;
extern template class AttentionGate<double>;

}  // namespace rupp
