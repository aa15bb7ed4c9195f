#include <benchmark/benchmark.h>

#include "rupp/data.hpp"
#include "rupp/losses.hpp"
#include "rupp/model.hpp"
#include "rupp/ops.hpp"
#include "rupp/random.hpp"

using namespace rupp;

namespace {

Tensor<float> random_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// Args: channels, spatial size.
void conv_args(benchmark::internal::Benchmark* b) {
  for (int c : {8, 32}) {
    for (int s : {32, 64}) b->Args({c, s});
  }
}

void BM_ConvNaive(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, s, s}, 1), w = random_tensor({c, c, 3, 3}, 2);
  const ConvSpec spec{3, 3, 1, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_naive(x, w, nullptr, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * c * c * 9 * s * s));
}
BENCHMARK(BM_ConvNaive)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_ConvIm2col(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, s, s}, 1), w = random_tensor({c, c, 3, 3}, 2);
  const ConvSpec spec{3, 3, 1, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, nullptr, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * c * c * 9 * s * s));
}
BENCHMARK(BM_ConvIm2col)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, s, s}, 1), w = random_tensor({c, c, 3, 3}, 2), g = random_tensor({1, c, s, s}, 3);
  const ConvSpec spec{3, 3, 1, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(g, x, w, spec, true, true, false));
}
BENCHMARK(BM_ConvBackward)->Apply(conv_args)->Unit(benchmark::kMillisecond);

ResUnetPPConfig small_model(std::size_t size) {
  ResUnetPPConfig c;
  c.base_channels = 8;
  c.depth = 4;
  c.input_height = c.input_width = size;
  return c;
}

void BM_ModelPredict(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  ResUnetPP<float> model(small_model(s));
  auto x = random_tensor({1, 3, s, s}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_ModelPredict)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  ResUnetPP<float> model(small_model(s));
  auto x = random_tensor({4, 3, s, s}, 5);
  Tensor<float> mask({4, 1, s, s});
  for (std::size_t i = 0; i < mask.numel(); i += 3) mask[i] = 1.0f;
  for (auto _ : state) {
    model.zero_grad();
    Tape<float> tape;
    auto loss = jaccard_loss(model.forward(tape, tape.constant(x), Mode::train), mask);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value()[0]);
  }
}
BENCHMARK(BM_TrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Preprocess(benchmark::State& state) {
  auto raw = make_synthetic_blobs(1, 256, 6).front();
  for (auto _ : state) benchmark::DoNotOptimize(preprocess(raw, 128, 128));
}
BENCHMARK(BM_Preprocess)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
