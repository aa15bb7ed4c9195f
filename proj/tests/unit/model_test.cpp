#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rupp/error.hpp"
#include "rupp/model.hpp"
#include "rupp/random.hpp"

using namespace rupp;

namespace {

ResUnetPPConfig small_config(std::size_t base = 4, std::size_t size = 32, std::size_t depth = 5) {
  ResUnetPPConfig c;
  c.base_channels = base;
  c.input_height = c.input_width = size;
  c.depth = depth;
  c.seed = 3;
  return c;
}

Tensor<float> random_input(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST(ModelConfig, Validation) {
  auto c = small_config();
  c.input_height = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(ResUnetPP<float>{c}, ConfigError);
  c = small_config();
  c.aspp_dilations.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(small_config().validate());
}

TEST(Model, ReducedConfigBridgeShape) {
  ResUnetPP<float> model(small_config(4, 32));
  Tape<float> tape;
  ForwardTrace trace;
  model.forward(tape, tape.constant(random_input({1, 3, 32, 32}, 1)), Mode::eval, &trace);
  EXPECT_EQ(trace.bridge, (Shape{64, 2, 2}));
  ASSERT_EQ(trace.encoder.size(), 5u);
  EXPECT_EQ(trace.encoder[0], (Shape{4, 32, 32}));
  EXPECT_EQ(trace.encoder[4], (Shape{64, 2, 2}));
  EXPECT_EQ(trace.pre_head, (Shape{4, 32, 32}));
  EXPECT_EQ(trace.output, (Shape{1, 32, 32}));
}

TEST(Model, OutputInOpenUnitIntervalAndShape) {
  ResUnetPP<float> model(small_config(4, 32));
  Tape<float> tape;
  auto y = model.forward(tape, tape.constant(random_input({2, 3, 32, 32}, 2)), Mode::train);
  EXPECT_EQ(y.shape(), (Shape{2, 1, 32, 32}));
  for (float v : y.value().data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Model, InputShapeMismatch) {
  ResUnetPP<float> model(small_config(4, 32));
  EXPECT_THROW(model.predict(Tensor<float>({1, 3, 16, 16})), ShapeError);
  EXPECT_THROW(model.predict(Tensor<float>({1, 1, 32, 32})), ShapeError);
}

TEST(Model, IdenticalInputsIdenticalOutputs) {
  ResUnetPP<float> model(small_config(4, 32));
  auto one = random_input({1, 3, 32, 32}, 3);
  Tensor<float> two({2, 3, 32, 32});
  std::copy(one.raw(), one.raw() + one.numel(), two.raw());
  std::copy(one.raw(), one.raw() + one.numel(), two.raw() + one.numel());
  auto y = model.predict(two);
  const std::size_t per = 32 * 32;
  EXPECT_TRUE(std::equal(y.raw(), y.raw() + per, y.raw() + per));
}

TEST(Model, EvalIsBatchOrderInvariant) {
  ResUnetPP<float> model(small_config(4, 32));
  auto batch = random_input({3, 3, 32, 32}, 4);
  auto all = model.predict(batch);
  const std::size_t in_per = 3 * 32 * 32, out_per = 32 * 32;
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor<float> single({1, 3, 32, 32}, std::vector<float>(batch.raw() + i * in_per, batch.raw() + (i + 1) * in_per));
    auto y = model.predict(single);
    EXPECT_TRUE(std::equal(y.raw(), y.raw() + out_per, all.raw() + i * out_per)) << "sample " << i;
  }
}

TEST(Model, ZeroInputGivesFiniteOutput) {
  ResUnetPP<float> model(small_config(4, 32));
  auto y = model.predict(Tensor<float>({1, 3, 32, 32}));
  for (float v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, InitializationIsReproducible) {
  ResUnetPP<float> a(small_config()), b(small_config());
  auto ra = a.named(), rb = b.named();
  ASSERT_EQ(ra.parameters.size(), rb.parameters.size());
  for (std::size_t i = 0; i < ra.parameters.size(); ++i) {
    EXPECT_EQ(ra.parameters[i].first, rb.parameters[i].first);
    EXPECT_EQ(ra.parameters[i].second->value, rb.parameters[i].second->value);
  }
  auto c = small_config();
  c.seed = 4;
  ResUnetPP<float> other(c);
  EXPECT_NE(other.named().parameters[0].second->value, ra.parameters[0].second->value);
}

TEST(Model, InitializationConventions) {
  ResUnetPP<float> model(small_config());
  for (auto& [name, p] : model.named().parameters) {
    if (name.ends_with("gamma")) EXPECT_EQ(p->value, Tensor<float>::ones_like(p->value)) << name;
    if (name.ends_with("beta") || name.ends_with("bias")) EXPECT_EQ(p->value, Tensor<float>::zeros_like(p->value)) << name;
  }
}

TEST(Model, HeadHasSeventeenParametersAtDefaults) {
  ResUnetPP<float> model(small_config(16, 32));
  auto& head = model.head();
  EXPECT_EQ(head.weight.value.numel() + head.bias->value.numel(), 17u);
}

TEST(Model, DoublingBaseRoughlyQuadruplesParameters) {
  const double a = static_cast<double>(ResUnetPP<float>(small_config(4)).count_parameters());
  const double b = static_cast<double>(ResUnetPP<float>(small_config(8)).count_parameters());
  EXPECT_GT(b / a, 3.5);
  EXPECT_LT(b / a, 4.1);
}

TEST(Model, ParameterNamesAreUnique) {
  ResUnetPP<float> model(small_config());
  auto refs = model.named();
  std::set<std::string> names;
  for (auto& [n, p] : refs.parameters) EXPECT_TRUE(names.insert(n).second) << n;
  for (auto& [n, b] : refs.buffers) EXPECT_TRUE(names.insert(n).second) << n;
}

TEST(Model, DepthFourShapes) {
  ResUnetPP<float> model(small_config(8, 64, 4));
  Tape<float> tape;
  ForwardTrace trace;
  model.forward(tape, tape.constant(random_input({1, 3, 64, 64}, 5)), Mode::eval, &trace);
  EXPECT_EQ(trace.bridge, (Shape{64, 8, 8}));
  ASSERT_EQ(trace.decoder.size(), 3u);
  EXPECT_EQ(trace.decoder[0], (Shape{32, 16, 16}));
  EXPECT_EQ(trace.decoder[2], (Shape{8, 64, 64}));
}
