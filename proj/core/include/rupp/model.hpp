#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rupp/layers.hpp"

namespace rupp {

struct ResUnetPPConfig {
  std::size_t input_channels = 3;
  std::size_t base_channels = 16;
  // Number of encoder stages; depth-1 max-pools separate them.
  std::size_t depth = 5;
  std::size_t input_height = 256;
  std::size_t input_width = 256;
  std::vector<std::size_t> aspp_dilations{1, 2, 4};
  std::uint64_t seed = 0;
  double threshold = 0.5;

  // Throws ConfigError.
  void validate() const;
  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
};

/// Shapes observed during one forward pass, per sample (batch dim dropped).
struct ForwardTrace {
  std::vector<Shape> encoder;
  Shape bridge;
  std::vector<Shape> decoder;
  Shape pre_head;
  Shape output;
};

/// Residual U-Net with an ASPP bridge and attention-gated skips.
///
/// Encoder stage 0 is conv-bn-relu; stages 1..depth-1 are conv-bn-relu followed
/// by a ResBlock, with a 2x2 max-pool between consecutive stages. The ASPP
/// bridge runs on the deepest stage. Each decoder stage upsamples by 2, gates
/// the encoder skip at that resolution with the upsampled features, concatenates
/// (gated skip first) and reduces channels with a projecting ResBlock. A 1x1
/// conv and a sigmoid produce the single-channel probability map.
template <typename T>
class ResUnetPP {
 public:
  explicit ResUnetPP(ResUnetPPConfig config);

  const ResUnetPPConfig& config() const noexcept { return config_; }

  Variable<T> forward(Tape<T>& tape, const Variable<T>& x, Mode mode, ForwardTrace* trace = nullptr);

  // Eval-mode probabilities. Reads parameters only, so concurrent calls on a
  // frozen model are safe.
  Tensor<T> predict(const Tensor<T>& x) const;

  NamedRefs<T> named();
  std::size_t count_parameters() const;
  void zero_grad();

  Conv2DLayer<T>& head() noexcept { return head_; }

 private:
  struct EncoderStage {
    Conv2DLayer<T> conv;
    BatchNorm2D<T> bn;
    std::optional<ResBlock<T>> res;
  };
  struct DecoderStage {
    AttentionGate<T> gate;
    ResBlock<T> res;
  };

  void initialize();

  ResUnetPPConfig config_;
  std::vector<EncoderStage> encoder_;
  ASPPModule<T> bridge_;
  std::vector<DecoderStage> decoder_;  // ordered deepest first
  Conv2DLayer<T> head_;
};

extern template class ResUnetPP<float>;
extern template class ResUnetPP<double>;

}  // namespace rupp
