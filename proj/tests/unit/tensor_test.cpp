#include <gtest/gtest.h>

#include <algorithm>

#include <cmath>

#include "rupp/error.hpp"
#include "rupp/ops.hpp"
#include "rupp/random.hpp"

using namespace rupp;

namespace {

Tensor<double> seq(Shape shape, double start = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = start + static_cast<double>(i);
  return t;
}

Tensor<float> random_f(Shape shape, Rng& rng) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{}, std::vector<float>{}), ShapeError);
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, ZeroSizeDimensionIsAllowed) {
  Tensor<float> t({1, 0, 4, 4});
  EXPECT_EQ(t.numel(), 0u);
}

TEST(Tensor, CastRoundTrip) {
  Tensor<float> t({3}, {1.5f, -2.0f, 0.25f});
  EXPECT_EQ(t.cast<double>().cast<float>(), t);
}

TEST(MapUnary, Relu) {
  Tensor<double> x({3}, {-1, 0, 2});
  EXPECT_EQ(map_unary(UnaryOp::relu, x).vec(), (std::vector<double>{0, 0, 2}));
}

TEST(MapUnary, SigmoidValues) {
  EXPECT_EQ(map_unary(UnaryOp::sigmoid, Tensor<double>({1}, {0.0}))[0], 0.5);
  EXPECT_NEAR(map_unary(UnaryOp::sigmoid, Tensor<double>({1}, {2.0}))[0], 0.8807970779778823, 1e-15);
}

TEST(MapUnary, SigmoidStaysFiniteAtExtremes) {
  auto y = map_unary(UnaryOp::sigmoid, Tensor<double>({2}, {-1000.0, 1000.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
}

TEST(MapUnary, LogOfNonPositiveNamesIndex) {
  try {
    map_unary(UnaryOp::log, Tensor<double>({3}, {1.0, 2.0, 0.0}));
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
}

TEST(MapUnary, OtherOps) {
  Tensor<double> x({2}, {1.0, -3.0});
  EXPECT_EQ(map_unary(UnaryOp::neg, x).vec(), (std::vector<double>{-1.0, 3.0}));
  EXPECT_EQ(map_unary(UnaryOp::square, x).vec(), (std::vector<double>{1.0, 9.0}));
  EXPECT_DOUBLE_EQ(map_unary(UnaryOp::exp, x)[0], std::exp(1.0));
}

TEST(BroadcastBinary, AddEqualShapes) {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b = Tensor<double>::ones({2, 2});
  EXPECT_EQ(broadcast_binary(BinaryOp::add, a, b).vec(), (std::vector<double>{2, 3, 4, 5}));
}

TEST(BroadcastBinary, MulByOnesIsIdentity) {
  Rng rng(1);
  Tensor<float> x = random_f({2, 3, 4, 5}, rng);
  EXPECT_EQ(broadcast_binary(BinaryOp::mul, x, Tensor<float>::ones_like(x)), x);
}

TEST(BroadcastBinary, ChannelBias) {
  Tensor<double> x({1, 2, 1, 2}, {1, 1, 1, 1});
  Tensor<double> b({2}, {10, 20});
  EXPECT_EQ(broadcast_binary(BinaryOp::add, x, b).vec(), (std::vector<double>{11, 11, 21, 21}));
}

TEST(BroadcastBinary, IncompatibleShapesListBoth) {
  try {
    broadcast_binary(BinaryOp::add, Tensor<double>({2, 3}), Tensor<double>({3, 2}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(3, 2)"), std::string::npos) << msg;
  }
}

TEST(BroadcastBinary, DivisionByZero) {
  EXPECT_THROW(broadcast_binary(BinaryOp::div, Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {1, 0})),
               DomainError);
}

TEST(Reduce, Examples) {
  EXPECT_EQ(reduce(ReduceOp::sum, Tensor<double>({3}, {1, 2, 3}), std::nullopt)[0], 6.0);
  auto m = reduce(ReduceOp::mean, Tensor<double>({2, 2}, {1, 3, 5, 7}), std::vector<std::size_t>{1});
  EXPECT_EQ(m.shape(), (Shape{2}));
  EXPECT_EQ(m.vec(), (std::vector<double>{2, 6}));
  EXPECT_EQ(reduce(ReduceOp::max, Tensor<double>({3}, {-5, -2, -9}), std::nullopt)[0], -2.0);
}

TEST(Reduce, KeepDims) {
  auto m = reduce(ReduceOp::sum, seq({2, 3}), std::vector<std::size_t>{0}, true);
  EXPECT_EQ(m.shape(), (Shape{1, 3}));
  EXPECT_EQ(m.vec(), (std::vector<double>{5, 7, 9}));
}

TEST(Reduce, EmptyAxisIsDomainError) {
  EXPECT_THROW(reduce(ReduceOp::mean, Tensor<double>({2, 0}), std::vector<std::size_t>{1}), DomainError);
}

TEST(Conv2d, OnesKernelWithPadding) {
  ConvSpec spec{3, 3, 1, 1, 1};
  auto x = Tensor<double>::ones({1, 1, 3, 3});
  auto w = Tensor<double>::ones({1, 1, 3, 3});
  const std::vector<double> expect{4, 6, 4, 6, 9, 6, 4, 6, 4};
  EXPECT_EQ(conv2d_naive(x, w, nullptr, spec).vec(), expect);
  EXPECT_EQ(conv2d(x, w, nullptr, spec).vec(), expect);
}

TEST(Conv2d, IdentityKernel) {
  ConvSpec spec{1, 1, 1, 0, 1};
  auto x = seq({2, 1, 4, 5});
  auto w = Tensor<double>::ones({1, 1, 1, 1});
  EXPECT_EQ(conv2d(x, w, nullptr, spec), x);
}

TEST(Conv2d, DilatedSum117) {
  ConvSpec spec{3, 3, 1, 0, 2};
  auto out = conv2d(seq({1, 1, 5, 5}), Tensor<double>::ones({1, 1, 3, 3}), nullptr, spec);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(out[0], 117.0);
  EXPECT_EQ(conv2d_naive(seq({1, 1, 5, 5}), Tensor<double>::ones({1, 1, 3, 3}), nullptr, spec)[0], 117.0);
}

TEST(Conv2d, ChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 3, 3, 3}), nullptr, ConvSpec{}), ShapeError);
}

TEST(Conv2d, OutputDims) {
  ConvSpec spec{3, 3, 2, 1, 1};
  EXPECT_EQ(spec.out_h(7), 4u);
  ConvSpec too_big{5, 5, 1, 0, 2};
  EXPECT_THROW(too_big.out_h(4), ShapeError);
}

TEST(Conv2d, Im2colMatchesNaiveF64) {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    ConvSpec spec{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2), rng.below(3), 1 + rng.below(2)};
    const std::size_t h = spec.dilation * (spec.kernel_h - 1) + 1 + rng.below(6);
    const std::size_t w = spec.dilation * (spec.kernel_w - 1) + 1 + rng.below(6);
    Tensor<double> x({2, 3, h, w}), wt({2, 3, spec.kernel_h, spec.kernel_w}), b({2});
    for (auto& v : x.data()) v = rng.uniform(-1, 1);
    for (auto& v : wt.data()) v = rng.uniform(-1, 1);
    for (auto& v : b.data()) v = rng.uniform(-1, 1);
    auto a = conv2d_naive(x, wt, &b, spec);
    auto c = conv2d(x, wt, &b, spec);
    ASSERT_EQ(a.shape(), c.shape());
    for (std::size_t k = 0; k < a.numel(); ++k) EXPECT_NEAR(a[k], c[k], 1e-12);
  }
}

TEST(Conv2d, Linearity) {
  Rng rng(9);
  ConvSpec spec{3, 3, 1, 1, 1};
  auto x = random_f({1, 2, 6, 6}, rng), y = random_f({1, 2, 6, 6}, rng), w = random_f({3, 2, 3, 3}, rng);
  const float alpha = 0.7f, beta = -1.3f;
  Tensor<float> mix(x.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * x[i] + beta * y[i];
  auto lhs = conv2d(mix, w, nullptr, spec);
  auto cx = conv2d(x, w, nullptr, spec), cy = conv2d(y, w, nullptr, spec);
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], alpha * cx[i] + beta * cy[i], 1e-5);
}

TEST(Conv2d, BackwardMatchesExplicitSums) {
  // 1x1x2x2 input, 1x1x1x1 kernel: dW = sum(g*x), dX = g*w, db = sum(g).
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> w({1, 1, 1, 1}, {3});
  Tensor<double> g({1, 1, 2, 2}, {1, 0, -1, 2});
  auto grads = conv2d_backward(g, x, w, ConvSpec{1, 1, 1, 0, 1}, true, true, true);
  EXPECT_EQ(grads.weight[0], 1 - 3 + 8.0);
  EXPECT_EQ(grads.bias[0], 2.0);
  EXPECT_EQ(grads.input.vec(), (std::vector<double>{3, 0, -3, 6}));
}

TEST(MaxPool, Examples) {
  EXPECT_EQ(maxpool2d(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4})).output.vec(), (std::vector<double>{4}));
  auto c = maxpool2d(Tensor<double>::full({1, 2, 4, 4}, 7.0)).output;
  EXPECT_EQ(c, Tensor<double>::full({1, 2, 2, 2}, 7.0));
  EXPECT_EQ(maxpool2d(seq({1, 1, 4, 4})).output.vec(), (std::vector<double>{6, 8, 14, 16}));
}

TEST(MaxPool, OddDimensionRejected) {
  try {
    maxpool2d(Tensor<double>({1, 1, 3, 4}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("resize"), std::string::npos) << e.what();
  }
}

TEST(MaxPool, TiesPickFirstInRowMajorOrder) {
  auto r = maxpool2d(Tensor<double>::full({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(r.argmax[0], 0u);
  auto g = maxpool2d_backward(Tensor<double>({1, 1, 1, 1}, {5.0}), r.argmax, Shape{1, 1, 2, 2});
  EXPECT_EQ(g.vec(), (std::vector<double>{5, 0, 0, 0}));
}

TEST(Upsample, NearestReplication) {
  auto y = upsample2d(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(y.vec(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Upsample, FactorOneIsIdentity) {
  auto x = seq({2, 3, 2, 2});
  EXPECT_EQ(upsample2d(x, 1), x);
}

TEST(Upsample, PoolOfUpsampleRecoversInput) {
  Rng rng(3);
  auto x = random_f({2, 3, 3, 5}, rng);
  EXPECT_EQ(maxpool2d(upsample2d(x)).output, x);
}

TEST(Upsample, FourCopiesOfEachElement) {
  auto x = seq({1, 1, 3, 3});
  auto y = upsample2d(x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(std::count(y.data().begin(), y.data().end(), x[i]), 4);
  }
  EXPECT_EQ(upsample2d_backward(Tensor<double>::ones_like(y)), Tensor<double>::full(x.shape(), 4.0));
}

TEST(Concat, Examples) {
  auto a = seq({2, 2, 4, 4}), b = seq({2, 3, 4, 4}, 100);
  auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 5, 4, 4}));
  EXPECT_EQ(slice_channels(c, 0, 2), a);
  EXPECT_EQ(slice_channels(c, 2, 5), b);
  EXPECT_EQ(concat_channels(a, Tensor<double>({2, 0, 4, 4})), a);
  const double s = reduce(ReduceOp::sum, c, std::nullopt)[0];
  EXPECT_EQ(s, reduce(ReduceOp::sum, a, std::nullopt)[0] + reduce(ReduceOp::sum, b, std::nullopt)[0]);
}

TEST(Concat, SpatialMismatch) {
  EXPECT_THROW(concat_channels(Tensor<double>({1, 1, 4, 4}), Tensor<double>({1, 1, 4, 2})), ShapeError);
}

TEST(Ops, PureAndDeterministic) {
  Rng rng(11);
  auto x = random_f({1, 2, 6, 6}, rng), w = random_f({2, 2, 3, 3}, rng);
  const auto x0 = x, w0 = w;
  auto a = conv2d(x, w, nullptr, ConvSpec{3, 3, 1, 1, 1});
  auto b = conv2d(x, w, nullptr, ConvSpec{3, 3, 1, 1, 1});
  EXPECT_EQ(a, b);
  EXPECT_EQ(x, x0);
  EXPECT_EQ(w, w0);
}
