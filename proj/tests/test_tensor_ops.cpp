#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"

using namespace impnet;
using namespace impnet::testing;

TEST(Tensor, DataLengthIsProductOfShape) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3);
  EXPECT_THROW(Tensor<float>({2, 0}), std::invalid_argument);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), std::invalid_argument);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0f);
  EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Autograd, SumGivesOnes) {
  Tape<double> tape;
  auto x = param<double>({2, 3}, 1);
  tape.backward(ops::sum(tape, x));
  for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Autograd, FanOutAccumulates) {
  Tape<double> tape;
  auto x = param<double>({4}, 2);
  tape.backward(ops::sum(tape, ops::add(tape, x, x)));
  for (double g : x.grad().data()) EXPECT_EQ(g, 2.0);
}

TEST(Autograd, NonScalarRootRejected) {
  Tape<double> tape;
  auto x = param<double>({3}, 3);
  auto y = ops::scale(tape, x, 2.0);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
  EXPECT_THROW(backward(tape, y), std::invalid_argument);
}

TEST(Autograd, TapeIsTopological) {
  Tape<double> tape;
  auto x = param<double>({3}, 4);
  auto y = ops::scale(tape, x, 2.0);
  auto z = ops::add(tape, y, x);
  ops::sum(tape, z);
  EXPECT_EQ(tape.size(), 3u);
}

TEST(Autograd, InferenceTapeRecordsNothing) {
  auto tape = Tape<double>::inference();
  auto x = param<double>({3}, 5);
  auto y = ops::sum(tape, ops::scale(tape, x, 2.0));
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, GradShapeMatchesValue) {
  Tape<double> tape;
  auto x = param<double>({1, 2, 4, 4}, 6);
  auto k = param<double>({3, 2, 3, 3}, 7);
  auto b = param<double>({3}, 8);
  tape.backward(ops::sum(tape, ops::conv2d(tape, x, k, b, 1, 1)));
  EXPECT_EQ(x.grad().shape(), x.shape());
  EXPECT_EQ(k.grad().shape(), k.shape());
  EXPECT_EQ(b.grad().shape(), b.shape());
}

TEST(GradCheck, SumOfSquaresIsExact) {
  auto x = param<double>({5}, 9);
  auto f = [&](Tape<double>& t) { return ops::sum(t, ops::mul(t, x, x)); };
  EXPECT_LT(grad_check(f, x, kStep), 1e-6);
}

TEST(GradCheck, ReportsNanAsInfinity) {
  auto x = Variable<double>::parameter(Tensor<double>({1}, std::vector<double>{-1.0}));
  auto f = [&](Tape<double>& t) {
    Tensor<double> v({1}, std::sqrt(x.value()[0]));
    return t.emit(std::move(v), {x}, [](const Tensor<double>&) {});
  };
  EXPECT_TRUE(std::isinf(grad_check(f, x, kStep)));
}

// ---- conv2d ----

TEST(Conv2d, PublishedFirstLayerShape) {
  auto tape = Tape<float>::inference();
  auto x = Variable<float>::constant(Tensor<float>({1, 1, 128, 128}));
  auto k = Variable<float>::constant(Tensor<float>({96, 1, 5, 5}));
  auto b = Variable<float>::constant(Tensor<float>({96}));
  EXPECT_EQ(ops::conv2d(tape, x, k, b, 1, 2).shape(), (Shape{1, 96, 128, 128}));
}

TEST(Conv2d, ZeroInputZeroBiasGivesZero) {
  auto tape = Tape<double>::inference();
  auto x = Variable<double>::constant(Tensor<double>({1, 1, 3, 3}));
  auto k = param<double>({2, 1, 3, 3}, 10);
  auto b = Variable<double>::constant(Tensor<double>({2}));
  const auto result = ops::conv2d(tape, x, k, b, 1, 1);
  for (double v : result.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, IdentityKernel) {
  auto tape = Tape<double>::inference();
  auto x = Variable<double>::constant(uniform<double>({1, 1, 3, 3}, 11));
  auto k = Variable<double>::constant(Tensor<double>({1, 1, 1, 1}, 1.0));
  auto b = Variable<double>::constant(Tensor<double>({1}));
  EXPECT_EQ(ops::conv2d(tape, x, k, b, 1, 0).value(), x.value().reshaped({1, 1, 3, 3}));
}

TEST(Conv2d, Errors) {
  auto tape = Tape<double>::inference();
  auto x = Variable<double>::constant(Tensor<double>({1, 2, 5, 5}));
  auto b = Variable<double>::constant(Tensor<double>({1}));
  auto wrong_cin = Variable<double>::constant(Tensor<double>({1, 3, 3, 3}));
  EXPECT_THROW(ops::conv2d(tape, x, wrong_cin, b, 1, 1), std::invalid_argument);
  auto k = Variable<double>::constant(Tensor<double>({1, 2, 2, 2}));
  EXPECT_THROW(ops::conv2d(tape, x, k, b, 2, 0), std::invalid_argument);  // (5-2)/2 not integral
  EXPECT_THROW(ops::conv2d(tape, x, k, b, 0, 0), std::invalid_argument);
  auto big = Variable<double>::constant(Tensor<double>({1, 2, 9, 9}));
  EXPECT_THROW(ops::conv2d(tape, x, big, b, 1, 1), std::invalid_argument);
}

TEST(Conv2d, StridedMatchesDirectSum) {
  auto tape = Tape<double>::inference();
  auto x = Variable<double>::constant(uniform<double>({2, 3, 7, 7}, 12));
  auto k = Variable<double>::constant(uniform<double>({4, 3, 3, 3}, 13));
  auto b = Variable<double>::constant(uniform<double>({4}, 14));
  auto y = ops::conv2d(tape, x, k, b, 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          double s = b.value()[o];
          for (int c = 0; c < 3; ++c)
            for (int u = 0; u < 3; ++u)
              for (int v = 0; v < 3; ++v) {
                const int yy = 2 * i - 1 + u, xx = 2 * j - 1 + v;
                if (yy >= 0 && yy < 7 && xx >= 0 && xx < 7) s += k.value().at(o, c, u, v) * x.value().at(n, c, yy, xx);
              }
          EXPECT_NEAR(y.at(n, o, i, j), s, 1e-12);
        }
}

class WinogradAgreement : public ::testing::TestWithParam<int> {};

TEST_P(WinogradAgreement, MatchesIm2col) {
  const int size = GetParam();
  auto tape = Tape<float>::inference();
  auto x = Variable<float>::constant(uniform<float>({2, 5, size, size}, 15));
  auto k = Variable<float>::constant(uniform<float>({6, 5, 3, 3}, 16));
  auto b = Variable<float>::constant(uniform<float>({6}, 17));
  const auto ref = ops::conv2d(tape, x, k, b, 1, 1, ops::ConvAlgo::im2col).value();
  for (auto algo : {ops::ConvAlgo::winograd_f23, ops::ConvAlgo::winograd_f43, ops::ConvAlgo::automatic}) {
    const auto y = ops::conv2d(tape, x, k, b, 1, 1, algo).value();
    EXPECT_LT(max_abs_diff(ref, y), 1e-4f) << "size " << size;
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, WinogradAgreement, ::testing::Values(1, 2, 3, 5, 6, 8, 9, 16, 50));

TEST(Conv2d, GradCheck) {
  auto x = param<double>({2, 2, 5, 5}, 18);
  auto k = param<double>({3, 2, 3, 3}, 19);
  auto b = param<double>({3}, 20);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{1, 0}}) {
    auto f = [&](Tape<double>& t) { return weighted_sum(t, ops::conv2d(t, x, k, b, stride, pad)); };
    EXPECT_LT(grad_check<double>(f, {{x, {}}, {k, {}}, {b, {}}}, kStep), kGradTol) << stride << "," << pad;
  }
}

// ---- maxpool2 ----

TEST(MaxPool, PublishedShape) {
  auto tape = Tape<float>::inference();
  auto x = Variable<float>::constant(Tensor<float>({1, 48, 128, 128}));
  EXPECT_EQ(ops::maxpool2(tape, x).shape(), (Shape{1, 48, 64, 64}));
}

TEST(MaxPool, ConstantAndWindowMax) {
  auto tape = Tape<double>::inference();
  auto c = Variable<double>::constant(Tensor<double>({1, 2, 4, 4}, 3.5));
  const auto result = ops::maxpool2(tape, c);
  for (double v : result.value().data()) EXPECT_EQ(v, 3.5);
  auto w = Variable<double>::constant(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(ops::maxpool2(tape, w).value()[0], 4.0);
  auto odd = Variable<double>::constant(Tensor<double>({1, 1, 3, 4}));
  EXPECT_THROW(ops::maxpool2(tape, odd), std::invalid_argument);
}

TEST(MaxPool, TieRoutesToFirstIndex) {
  Tape<double> tape;
  auto x = Variable<double>::parameter(Tensor<double>({1, 1, 2, 2}, 1.0));
  tape.backward(ops::sum(tape, ops::maxpool2(tape, x)));
  EXPECT_EQ(x.grad().data()[0], 1.0);
  EXPECT_EQ(x.grad().data()[1] + x.grad().data()[2] + x.grad().data()[3], 0.0);
}

TEST(MaxPool, GradCheck) {
  auto x = Variable<double>::parameter(spread({2, 3, 4, 6}, 21));
  auto f = [&](Tape<double>& t) { return weighted_sum(t, ops::maxpool2(t, x)); };
  EXPECT_LT(grad_check(f, x, kStep), kGradTol);
}

// ---- conv1d_channels ----

TEST(Conv1dChannels, Examples) {
  auto tape = Tape<double>::inference();
  auto v = Variable<double>::constant(Tensor<double>({1, 4}, std::vector<double>{1, 2, 3, 4}));
  auto ones = Variable<double>::constant(Tensor<double>({3}, 1.0));
  const std::vector<double> expected{3, 6, 9, 7};
  const auto y = ops::conv1d_channels(tape, v, ones).value();
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), expected);

  auto identity = Variable<double>::constant(Tensor<double>({3}, std::vector<double>{0, 1, 0}));
  EXPECT_EQ(ops::conv1d_channels(tape, v, identity).value(), v.value());
  auto zero = Variable<double>::constant(Tensor<double>({3}));
  const auto result = ops::conv1d_channels(tape, v, zero);
  for (double x : result.value().data()) EXPECT_EQ(x, 0.0);
}

TEST(Conv1dChannels, Errors) {
  auto tape = Tape<double>::inference();
  auto v = Variable<double>::constant(Tensor<double>({1, 4}));
  EXPECT_THROW(ops::conv1d_channels(tape, v, Variable<double>::constant(Tensor<double>({2}))), std::invalid_argument);
  EXPECT_THROW(ops::conv1d_channels(tape, v, Variable<double>::constant(Tensor<double>({5}))), std::invalid_argument);
}

TEST(Conv1dChannels, GradCheck) {
  auto v = param<double>({2, 9}, 22);
  auto k = param<double>({5}, 23);
  auto f = [&](Tape<double>& t) { return weighted_sum(t, ops::conv1d_channels(t, v, k)); };
  EXPECT_LT(grad_check<double>(f, {{v, {}}, {k, {}}}, kStep), kGradTol);
}

// ---- dense ----

TEST(Dense, ShapesAndTrivialCases) {
  auto tape = Tape<double>::inference();
  auto x = Variable<double>::constant(uniform<double>({1, 192}, 24));
  auto w = Variable<double>::constant(Tensor<double>({192, 256}));
  auto b = Variable<double>::constant(uniform<double>({256}, 25));
  const auto y = ops::dense(tape, x, w, b).value();
  EXPECT_EQ(y.shape(), (Shape{1, 256}));
  for (int j = 0; j < 256; ++j) EXPECT_EQ(y[j], b.value()[j]);

  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  auto x3 = Variable<double>::constant(uniform<double>({2, 3}, 26));
  EXPECT_EQ(ops::dense(tape, x3, Variable<double>::constant(eye), Variable<double>::constant(Tensor<double>({3})))
                .value(),
            x3.value());
  EXPECT_THROW(ops::dense(tape, x3, w, b), std::invalid_argument);
}

TEST(Dense, GradCheck) {
  auto x = param<double>({3, 4}, 27);
  auto w = param<double>({4, 5}, 28);
  auto b = param<double>({5}, 29);
  auto f = [&](Tape<double>& t) { return weighted_sum(t, ops::dense(t, x, w, b)); };
  EXPECT_LT(grad_check<double>(f, {{x, {}}, {w, {}}, {b, {}}}, kStep), kGradTol);
}

// ---- elementwise ----

TEST(ElemwiseMax, Examples) {
  auto tape = Tape<double>::inference();
  auto a = Variable<double>::constant(Tensor<double>({2}, std::vector<double>{1, 5}));
  auto b = Variable<double>::constant(Tensor<double>({2}, std::vector<double>{4, 2}));
  const auto y = ops::elemwise_max(tape, a, b).value();
  EXPECT_EQ(y[0], 4.0);
  EXPECT_EQ(y[1], 5.0);
  EXPECT_EQ(ops::elemwise_max(tape, a, a).value(), a.value());

  auto x = uniform<double>({6}, 30);
  Tensor<double> neg(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) neg[i] = -std::abs(x[i]);
  const auto clipped =
      ops::elemwise_max(tape, Variable<double>::constant(neg), Variable<double>::constant(Tensor<double>({6})));
  for (double v : clipped.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(ops::elemwise_max(tape, a, Variable<double>::constant(Tensor<double>({3}))), std::invalid_argument);
}

TEST(ElemwiseMax, TieRoutesToFirstArgument) {
  Tape<double> tape;
  auto a = Variable<double>::parameter(Tensor<double>({2}, 1.0));
  auto b = Variable<double>::parameter(Tensor<double>({2}, 1.0));
  tape.backward(ops::sum(tape, ops::elemwise_max(tape, a, b)));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_FALSE(b.has_grad() && b.grad()[0] != 0.0);
}

TEST(ElemwiseMax, GradCheck) {
  auto a = param<double>({10}, 31);
  auto b = param<double>({10}, 32);
  auto f = [&](Tape<double>& t) { return weighted_sum(t, ops::elemwise_max(t, a, b)); };
  EXPECT_LT(grad_check<double>(f, {{a, {}}, {b, {}}}, kStep), kGradTol);
}

TEST(Elementwise, SigmoidGapScaleExamples) {
  auto tape = Tape<double>::inference();
  EXPECT_EQ(ops::sigmoid(tape, Variable<double>::constant(Tensor<double>({1}))).value()[0], 0.5);
  auto c = Variable<double>::constant(Tensor<double>({2, 3, 4, 4}, 0.75));
  const auto result = ops::global_avg_pool(tape, c);
  for (double v : result.value().data()) EXPECT_DOUBLE_EQ(v, 0.75);
  auto x = Variable<double>::constant(uniform<double>({2, 3, 4, 4}, 33));
  auto ones = Variable<double>::constant(Tensor<double>({2, 3}, 1.0));
  EXPECT_EQ(ops::scale_channels(tape, x, ones).value(), x.value());
  EXPECT_THROW(ops::scale_channels(tape, x, Variable<double>::constant(Tensor<double>({2, 4}))),
               std::invalid_argument);
  EXPECT_THROW(ops::global_avg_pool(tape, Variable<double>::constant(Tensor<double>({2, 3}))), std::invalid_argument);
  EXPECT_THROW(ops::add(tape, x, ones), std::invalid_argument);
}

TEST(Elementwise, GradChecks) {
  auto x = param<double>({2, 3, 2, 3}, 34);
  auto y = param<double>({2, 3, 2, 3}, 35);
  auto s = param<double>({2, 3}, 36);
  EXPECT_LT(grad_check([&](Tape<double>& t) { return weighted_sum(t, ops::sigmoid(t, x)); }, x, kStep), kGradTol);
  EXPECT_LT(grad_check([&](Tape<double>& t) { return weighted_sum(t, ops::global_avg_pool(t, x)); }, x, kStep),
            kGradTol);
  EXPECT_LT(grad_check<double>([&](Tape<double>& t) { return weighted_sum(t, ops::add(t, x, y)); },
                               {{x, {}}, {y, {}}}, kStep),
            kGradTol);
  EXPECT_LT(grad_check<double>([&](Tape<double>& t) { return weighted_sum(t, ops::mul(t, x, y)); },
                               {{x, {}}, {y, {}}}, kStep),
            kGradTol);
  EXPECT_LT(grad_check<double>([&](Tape<double>& t) { return weighted_sum(t, ops::scale_channels(t, x, s)); },
                               {{x, {}}, {s, {}}}, kStep),
            kGradTol);
  EXPECT_LT(grad_check([&](Tape<double>& t) { return weighted_sum(t, ops::scale(t, x, -1.5)); }, x, kStep), kGradTol);
  EXPECT_LT(grad_check([&](Tape<double>& t) { return weighted_sum(t, ops::crop(t, x, 0, 1, 2, 2)); }, x, kStep),
            kGradTol);
  EXPECT_LT(grad_check([&](Tape<double>& t) { return weighted_sum(t, ops::channel_slice(t, x, 1, 3)); }, x, kStep),
            kGradTol);
  auto z = Variable<double>::parameter(spread({2, 4, 2, 3}, 37));
  EXPECT_LT(grad_check([&](Tape<double>& t) { return weighted_sum(t, ops::channel_halves_max(t, z)); }, z, kStep),
            kGradTol);
}

// ---- softmax cross-entropy ----

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLnK) {
  auto tape = Tape<double>::inference();
  auto logits = Variable<double>::constant(Tensor<double>({3, 7}, 0.25));
  const std::vector<int> labels{0, 3, 6};
  EXPECT_NEAR(ops::softmax_cross_entropy<double>(tape, logits, labels).value()[0], std::log(7.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, LargeMarginGivesZero) {
  auto tape = Tape<double>::inference();
  auto logits = Variable<double>::constant(Tensor<double>({1, 3}, std::vector<double>{0, 1000, 0}));
  const std::vector<int> labels{1};
  const double loss = ops::softmax_cross_entropy<double>(tape, logits, labels).value()[0];
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-12);
}

TEST(SoftmaxCrossEntropy, HandGradient) {
  Tape<double> tape;
  auto logits = Variable<double>::parameter(Tensor<double>({1, 2}));
  const std::vector<int> labels{0};
  tape.backward(ops::softmax_cross_entropy<double>(tape, logits, labels));
  EXPECT_DOUBLE_EQ(logits.grad()[0], -0.5);
  EXPECT_DOUBLE_EQ(logits.grad()[1], 0.5);
}

TEST(SoftmaxCrossEntropy, LabelRange) {
  auto tape = Tape<double>::inference();
  auto logits = Variable<double>::constant(Tensor<double>({1, 2}));
  const std::vector<int> bad{2};
  EXPECT_THROW(ops::softmax_cross_entropy<double>(tape, logits, bad), std::invalid_argument);
}

TEST(SoftmaxCrossEntropy, NonNegativeAndGradCheck) {
  auto logits = param<double>({4, 5}, 37, 3.0);
  const std::vector<int> labels{0, 4, 2, 2};
  auto f = [&](Tape<double>& t) { return ops::softmax_cross_entropy<double>(t, logits, labels); };
  auto tape = Tape<double>::inference();
  EXPECT_GE(f(tape).value()[0], 0.0);
  EXPECT_LT(grad_check(f, logits, kStep), kGradTol);
}

TEST(Ops, PureAndBitReproducible) {
  auto tape = Tape<float>::inference();
  auto x = Variable<float>::constant(uniform<float>({1, 4, 8, 8}, 38));
  auto k = Variable<float>::constant(uniform<float>({6, 4, 3, 3}, 39));
  auto b = Variable<float>::constant(uniform<float>({6}, 40));
  const auto a = ops::conv2d(tape, x, k, b, 1, 1).value();
  const auto c = ops::conv2d(tape, x, k, b, 1, 1).value();
  EXPECT_TRUE(bitwise_equal(a, c));
}
