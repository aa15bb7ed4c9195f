#include "rupp/layers.hpp"

#include <cmath>

#include "rupp/error.hpp"
#include "rupp/random.hpp"

namespace rupp {

template <typename T>
void he_uniform_init(Tensor<T>& weight, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw ConfigError("he_uniform_init: fan_in must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Rng rng(seed);
  for (auto& v : weight.data()) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
Conv2DLayer<T>::Conv2DLayer(std::size_t in_channels, std::size_t out_channels, ConvSpec spec_, bool with_bias)
    : weight(Tensor<T>({out_channels, in_channels, spec_.kernel_h, spec_.kernel_w})), spec(spec_) {
  spec.validate();
  if (with_bias) bias.emplace(Tensor<T>({out_channels}));
}

template <typename T>
Variable<T> Conv2DLayer<T>::forward(Tape<T>& tape, const Variable<T>& x) {
  auto w = tape.parameter(weight);
  if (bias) {
    auto b = tape.parameter(*bias);
    return ad::conv2d(x, w, &b, spec);
  }
  return ad::conv2d<T>(x, w, nullptr, spec);
}

template <typename T>
void Conv2DLayer<T>::collect(const std::string& prefix, NamedRefs<T>& refs) {
  refs.parameters.emplace_back(prefix + ".weight", &weight);
  if (bias) refs.parameters.emplace_back(prefix + ".bias", &*bias);
}

template <typename T>
BatchNorm2D<T>::BatchNorm2D(std::size_t channels, T momentum_, T eps_)
    : gamma(Tensor<T>::ones({channels})),
      beta(Tensor<T>({channels})),
      running_mean(Tensor<T>({channels})),
      running_var(Tensor<T>::ones({channels})),
      momentum(momentum_),
      eps(eps_) {}

template <typename T>
Variable<T> BatchNorm2D<T>::forward(Tape<T>& tape, const Variable<T>& x, Mode mode) {
  auto g = tape.parameter(gamma);
  auto b = tape.parameter(beta);
  if (mode == Mode::eval) return ad::batch_norm_eval(x, g, b, running_mean, running_var, eps);
  auto r = ad::batch_norm_train(x, g, b, eps);
  for (std::size_t k = 0; k < running_mean.numel(); ++k) {
    running_mean[k] = momentum * running_mean[k] + (T(1) - momentum) * r.batch_mean[k];
    running_var[k] = momentum * running_var[k] + (T(1) - momentum) * r.batch_var[k];
  }
  return r.output;
}

template <typename T>
void BatchNorm2D<T>::collect(const std::string& prefix, NamedRefs<T>& refs) {
  refs.parameters.emplace_back(prefix + ".gamma", &gamma);
  refs.parameters.emplace_back(prefix + ".beta", &beta);
  refs.buffers.emplace_back(prefix + ".running_mean", &running_mean);
  refs.buffers.emplace_back(prefix + ".running_var", &running_var);
}

template <typename T>
Variable<T> conv_bn_relu(Tape<T>& tape, const Variable<T>& x, Conv2DLayer<T>& conv, BatchNorm2D<T>& bn, Mode mode) {
  return ad::relu(bn.forward(tape, conv.forward(tape, x), mode));
}

namespace {

ConvSpec same_3x3(std::size_t dilation = 1) {
  return ConvSpec{3, 3, 1, dilation, dilation};
}

ConvSpec pointwise_spec() {
  return ConvSpec{1, 1, 1, 0, 1};
}

}  // namespace

template <typename T>
ResBlock<T>::ResBlock(std::size_t in_channels, std::size_t out_channels)
    : conv1(in_channels, out_channels, same_3x3(), false),
      bn1(out_channels),
      conv2(out_channels, out_channels, same_3x3(), false),
      bn2(out_channels) {
  if (in_channels != out_channels) shortcut.emplace(in_channels, out_channels, pointwise_spec(), true);
}

template <typename T>
Variable<T> ResBlock<T>::forward(Tape<T>& tape, const Variable<T>& x, Mode mode) {
  auto h = conv_bn_relu(tape, x, conv1, bn1, mode);
  h = bn2.forward(tape, conv2.forward(tape, h), mode);
  auto skip = shortcut ? shortcut->forward(tape, x) : x;
  return ad::relu(ad::add(h, skip));
}

template <typename T>
void ResBlock<T>::collect(const std::string& prefix, NamedRefs<T>& refs) {
  conv1.collect(prefix + ".conv1", refs);
  bn1.collect(prefix + ".bn1", refs);
  conv2.collect(prefix + ".conv2", refs);
  bn2.collect(prefix + ".bn2", refs);
  if (shortcut) shortcut->collect(prefix + ".shortcut", refs);
}

template <typename T>
ASPPModule<T>::ASPPModule(std::size_t in_channels, std::size_t out_channels, const std::vector<std::size_t>& dilations)
    : pointwise(in_channels, out_channels, pointwise_spec(), true),
      fuse(out_channels * (dilations.size() + 1), out_channels, pointwise_spec(), true) {
  for (auto d : dilations) {
    if (d == 0) throw ConfigError("ASPP dilation rates must be >= 1");
    dilated.emplace_back(in_channels, out_channels, same_3x3(d), true);
  }
}

template <typename T>
Variable<T> ASPPModule<T>::forward(Tape<T>& tape, const Variable<T>& x) {
  auto cat = pointwise.forward(tape, x);
  for (auto& branch : dilated) cat = ad::concat_channels(cat, branch.forward(tape, x));
  return fuse.forward(tape, cat);
}

template <typename T>
void ASPPModule<T>::collect(const std::string& prefix, NamedRefs<T>& refs) {
  pointwise.collect(prefix + ".pointwise", refs);
  for (std::size_t i = 0; i < dilated.size(); ++i) {
    dilated[i].collect(prefix + ".dilated" + std::to_string(i), refs);
  }
  fuse.collect(prefix + ".fuse", refs);
}

template <typename T>
AttentionGate<T>::AttentionGate(std::size_t skip_channels, std::size_t gate_channels, std::size_t inter_channels)
    : w_gate(gate_channels, inter_channels, pointwise_spec(), true),
      w_skip(skip_channels, inter_channels, pointwise_spec(), true),
      psi(inter_channels, 1, pointwise_spec(), true) {}

template <typename T>
Variable<T> AttentionGate<T>::attention(Tape<T>& tape, const Variable<T>& skip, const Variable<T>& gate) {
  const auto& s = skip.shape();
  const auto& g = gate.shape();
  if (s.size() != 4 || g.size() != 4 || s[0] != g[0] || s[2] != g[2] || s[3] != g[3]) {
    throw ShapeError("attention gate: skip " + shape_str(s) + " and gate " + shape_str(g) +
                     " must share batch and spatial dims");
  }
  auto joint = ad::relu(ad::add(w_gate.forward(tape, gate), w_skip.forward(tape, skip)));
  return ad::sigmoid(psi.forward(tape, joint));
}

template <typename T>
Variable<T> AttentionGate<T>::forward(Tape<T>& tape, const Variable<T>& skip, const Variable<T>& gate) {
  return ad::scale_by_map(skip, attention(tape, skip, gate));
}

template <typename T>
void AttentionGate<T>::collect(const std::string& prefix, NamedRefs<T>& refs) {
  w_gate.collect(prefix + ".w_gate", refs);
  w_skip.collect(prefix + ".w_skip", refs);
  psi.collect(prefix + ".psi", refs);
}

template void he_uniform_init(Tensor<float>&, std::size_t, std::uint64_t);
template void he_uniform_init(Tensor<double>&, std::size_t, std::uint64_t);
template Variable<float> conv_bn_relu(Tape<float>&, const Variable<float>&, Conv2DLayer<float>&,
                                      BatchNorm2D<float>&, Mode);
template Variable<double> conv_bn_relu(Tape<double>&, const Variable<double>&, Conv2DLayer<double>&,
                                       BatchNorm2D<double>&, Mode);

template class Conv2DLayer<float>;
template class Conv2DLayer<double>;
template class BatchNorm2D<float>;
template class BatchNorm2D<double>;
template class ResBlock<float>;
template class ResBlock<double>;
template class ASPPModule<float>;
template class ASPPModule<double>;
template class AttentionGate<float>;
template class AttentionGate<double>;

}  // namespace rupp
