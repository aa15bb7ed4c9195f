#include "rupp/model.hpp"

#include "rupp/error.hpp"
#include "rupp/random.hpp"

namespace rupp {

void ResUnetPPConfig::validate() const {
  if (input_channels == 0) throw ConfigError("model.input_channels must be >= 1");
  if (base_channels == 0) throw ConfigError("model.base_channels must be >= 1");
  if (depth == 0) throw ConfigError("model.depth must be >= 1");
  if (depth > 16) throw ConfigError("model.depth must be <= 16");
  if (input_height == 0 || input_width == 0) throw ConfigError("model input size must be positive");
  const std::size_t div = std::size_t{1} << (depth - 1);
  if (input_height % div != 0 || input_width % div != 0) {
    throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                      " is not divisible by 2^(depth-1) = " + std::to_string(div));
  }
  if (aspp_dilations.empty()) throw ConfigError("model.aspp_dilations must not be empty");
  for (auto d : aspp_dilations) {
    if (d == 0) throw ConfigError("model.aspp_dilations entries must be >= 1");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("model.threshold must lie in (0, 1)");
}

namespace {

constexpr ConvSpec kConv3x3{3, 3, 1, 1, 1};
constexpr ConvSpec kConv1x1{1, 1, 1, 0, 1};

Shape drop_batch(const Shape& s) {
  return Shape(s.begin() + 1, s.end());
}

}  // namespace

template <typename T>
ResUnetPP<T>::ResUnetPP(ResUnetPPConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t depth = config_.depth;
  for (std::size_t s = 0; s < depth; ++s) {
    const std::size_t in = s == 0 ? config_.input_channels : config_.stage_channels(s - 1);
    const std::size_t out = config_.stage_channels(s);
    EncoderStage stage{Conv2DLayer<T>(in, out, kConv3x3, false), BatchNorm2D<T>(out), std::nullopt};
    if (s > 0) stage.res.emplace(out, out);
    encoder_.push_back(std::move(stage));
  }
  const std::size_t deepest = config_.stage_channels(depth - 1);
  bridge_ = ASPPModule<T>(deepest, deepest, config_.aspp_dilations);
  for (std::size_t s = depth - 1; s-- > 0;) {
    const std::size_t skip = config_.stage_channels(s);
    const std::size_t gate = config_.stage_channels(s + 1);
    const std::size_t inter = skip > 1 ? skip / 2 : 1;
    decoder_.push_back(DecoderStage{AttentionGate<T>(skip, gate, inter), ResBlock<T>(skip + gate, skip)});
  }
  head_ = Conv2DLayer<T>(config_.base_channels, 1, kConv1x1, true);
  initialize();
}

template <typename T>
void ResUnetPP<T>::initialize() {
  // Each conv weight draws from its own stream keyed by name, so adding or
  // reordering layers never shifts other layers' initial values.
  auto refs = named();
  for (auto& [name, p] : refs.parameters) {
    if (p->value.rank() != 4) continue;
    const std::size_t fan_in = p->value.dim(1) * p->value.dim(2) * p->value.dim(3);
    he_uniform_init(p->value, fan_in, derive_seed(config_.seed, hash_name(name)));
    p->zero_grad();
  }
}

template <typename T>
Variable<T> ResUnetPP<T>::forward(Tape<T>& tape, const Variable<T>& x, Mode mode, ForwardTrace* trace) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != config_.input_channels || xs[2] != config_.input_height ||
      xs[3] != config_.input_width) {
    throw ShapeError("model expects input (N, " + std::to_string(config_.input_channels) + ", " +
                     std::to_string(config_.input_height) + ", " + std::to_string(config_.input_width) + "), got " +
                     shape_str(xs));
  }
  if (trace) *trace = ForwardTrace{};

  std::vector<Variable<T>> skips;
  Variable<T> h = x;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    if (s > 0) h = ad::maxpool2d(h);
    auto& stage = encoder_[s];
    h = conv_bn_relu(tape, h, stage.conv, stage.bn, mode);
    if (stage.res) h = stage.res->forward(tape, h, mode);
    if (trace) trace->encoder.push_back(drop_batch(h.shape()));
    skips.push_back(h);
  }

  h = bridge_.forward(tape, h);
  if (trace) trace->bridge = drop_batch(h.shape());

  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    const auto& skip = skips[skips.size() - 2 - d];
    auto up = ad::upsample2d(h, 2);
    auto gated = decoder_[d].gate.forward(tape, skip, up);
    h = decoder_[d].res.forward(tape, ad::concat_channels(gated, up), mode);
    if (trace) trace->decoder.push_back(drop_batch(h.shape()));
  }
  if (trace) trace->pre_head = drop_batch(h.shape());

  auto out = ad::sigmoid(head_.forward(tape, h));
  if (trace) trace->output = drop_batch(out.shape());
  return out;
}

template <typename T>
Tensor<T> ResUnetPP<T>::predict(const Tensor<T>& x) const {
  // Eval mode never writes to parameters or buffers and backward is never run
  // on this tape, so binding the parameters through a mutable view is safe.
  auto& self = const_cast<ResUnetPP&>(*this);
  Tape<T> tape;
  return self.forward(tape, tape.constant(x), Mode::eval).value();
}

template <typename T>
NamedRefs<T> ResUnetPP<T>::named() {
  NamedRefs<T> refs;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    const std::string p = "enc" + std::to_string(s);
    encoder_[s].conv.collect(p + ".conv", refs);
    encoder_[s].bn.collect(p + ".bn", refs);
    if (encoder_[s].res) encoder_[s].res->collect(p + ".res", refs);
  }
  bridge_.collect("bridge", refs);
  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    // Named by the resolution level they restore.
    const std::string p = "dec" + std::to_string(encoder_.size() - 2 - d);
    decoder_[d].gate.collect(p + ".gate", refs);
    decoder_[d].res.collect(p + ".res", refs);
  }
  head_.collect("head", refs);
  return refs;
}

template <typename T>
std::size_t ResUnetPP<T>::count_parameters() const {
  auto refs = const_cast<ResUnetPP&>(*this).named();
  std::size_t total = 0;
  for (const auto& [name, p] : refs.parameters) {
    if (p->requires_grad) total += p->value.numel();
  }
  return total;
}

template <typename T>
void ResUnetPP<T>::zero_grad() {
  for (auto& [name, p] : named().parameters) p->zero_grad();
}

template class ResUnetPP<float>;
template class ResUnetPP<double>;

}  // namespace rupp
