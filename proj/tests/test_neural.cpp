#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "porogan/adam.hpp"
#include "porogan/layers.hpp"
#include "porogan/loss.hpp"
#include "test_util.hpp"

using namespace porogan;
using porogan::test::expect_error;
using porogan::test::grad_check;
using porogan::test::random_input;

namespace {

// Zero-padded cross-correlation written as plain loops.
Tensor5<double> naive_conv(const Tensor5<double>& x, const Tensor5<double>& w, std::size_t s, std::size_t p) {
  const std::size_t N = x.extent(0), C = x.extent(1), O = w.extent(0), k0 = w.extent(2), k1 = w.extent(3),
                    k2 = w.extent(4);
  const std::size_t D = (x.extent(2) + 2 * p - k0) / s + 1, H = (x.extent(3) + 2 * p - k1) / s + 1,
                    W = (x.extent(4) + 2 * p - k2) / s + 1;
  Tensor5<double> y({N, O, D, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t ww = 0; ww < W; ++ww) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < k0; ++a)
                for (std::size_t b = 0; b < k1; ++b)
                  for (std::size_t e = 0; e < k2; ++e) {
                    const long id = long(d * s + a) - long(p), ih = long(h * s + b) - long(p),
                               iw = long(ww * s + e) - long(p);
                    if (id < 0 || ih < 0 || iw < 0 || id >= long(x.extent(2)) || ih >= long(x.extent(3)) ||
                        iw >= long(x.extent(4)))
                      continue;
                    acc += x(n, c, id, ih, iw) * w(o, c, a, b, e);
                  }
            y(n, o, d, h, ww) = acc;
          }
  return y;
}

// Scatter form of the transposed convolution. Weight is (in, out, k, k, k).
Tensor5<double> naive_conv_transpose(const Tensor5<double>& x, const Tensor5<double>& w, std::size_t s,
                                     std::size_t p) {
  const std::size_t N = x.extent(0), C = x.extent(1), O = w.extent(1), k = w.extent(2);
  const std::size_t D = (x.extent(2) - 1) * s + k - 2 * p, H = (x.extent(3) - 1) * s + k - 2 * p,
                    W = (x.extent(4) - 1) * s + k - 2 * p;
  Tensor5<double> y({N, O, D, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t d = 0; d < x.extent(2); ++d)
        for (std::size_t h = 0; h < x.extent(3); ++h)
          for (std::size_t ww = 0; ww < x.extent(4); ++ww)
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b)
                  for (std::size_t e = 0; e < k; ++e) {
                    const long od = long(d * s + a) - long(p), oh = long(h * s + b) - long(p),
                               ow = long(ww * s + e) - long(p);
                    if (od < 0 || oh < 0 || ow < 0 || od >= long(D) || oh >= long(H) || ow >= long(W)) continue;
                    y(n, o, od, oh, ow) += x(n, c, d, h, ww) * w(c, o, a, b, e);
                  }
  return y;
}

double max_rel_diff(const Tensor5<double>& a, const Tensor5<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return diff / std::max(scale, 1e-300);
}

Tensor5<double> normal(Shape5 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor5<double> t(s);
  fill_normal(t, rng);
  return t;
}

}  // namespace

TEST(Conv3d, UnitKernelIsIdentity) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 1, 1, 1, 1, 0));
  conv.weight().value[0] = 1.0;
  auto x = normal({2, 1, 3, 4, 5}, 1);
  EXPECT_EQ(conv.forward(x, Mode::train), x);
}

TEST(Conv3d, OnesKernelSumsBlocks) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 1, 1, 2, 2, 0));
  conv.weight().value.fill(1.0);
  auto y = conv.forward(Tensor5<double>({1, 1, 4, 4, 4}, 1.0), Mode::train);
  EXPECT_EQ(y.shape(), (Shape5{1, 1, 2, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 8.0);
}

TEST(Conv3d, MatchesNaiveLoops) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 2, 3, 3, 1, 1));
  conv.weight().value = normal(conv.weight().shape(), 2);
  auto x = normal({1, 2, 5, 5, 5}, 3);
  EXPECT_LE(max_rel_diff(conv.forward(x, Mode::train), naive_conv(x, conv.weight().value, 1, 1)), 1e-12);
}

TEST(Conv3d, StridedPaddedMatchesNaiveLoops) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 3, 2, 4, 2, 1));
  conv.weight().value = normal(conv.weight().shape(), 4);
  auto x = normal({2, 3, 8, 7, 6}, 5);
  EXPECT_LE(max_rel_diff(conv.forward(x, Mode::train), naive_conv(x, conv.weight().value, 2, 1)), 1e-12);
}

TEST(Conv3d, BiasAddsPerChannel) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 1, 2, 1, 1, 0, true));
  conv.weight().value.fill(0.0);
  conv.bias().value[0] = 1.5;
  conv.bias().value[1] = -2.0;
  auto y = conv.forward(Tensor5<double>({1, 1, 2, 2, 2}, 3.0), Mode::train);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(y[i], 1.5);
    EXPECT_EQ(y[8 + i], -2.0);
  }
}

TEST(Conv3d, ChannelMismatchIsShapeError) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 2, 1, 3, 1, 0));
  expect_error(Errc::shape, [&] { conv.forward(Tensor5<double>({1, 1, 4, 4, 4}), Mode::train); });
}

TEST(Conv3d, TooSmallInputIsShapeError) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 1, 1, 4, 1, 0));
  expect_error(Errc::shape, [&] { conv.forward(Tensor5<double>({1, 1, 3, 3, 3}), Mode::train); });
}

TEST(ConvTranspose3d, SingleInputScattersKernel) {
  ConvTranspose3d<double> up(conv_spec(LayerKind::conv_transpose3d, 1, 1, 4, 1, 0));
  up.weight().value = normal(up.weight().shape(), 6);
  auto y = up.forward(Tensor5<double>({1, 1, 1, 1, 1}, 2.5), Mode::train);
  ASSERT_EQ(y.shape(), (Shape5{1, 1, 4, 4, 4}));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_DOUBLE_EQ(y[i], 2.5 * up.weight().value[i]);
}

TEST(ConvTranspose3d, DoublesWithKernel4Stride2Pad1) {
  ConvTranspose3d<double> up(conv_spec(LayerKind::conv_transpose3d, 2, 3, 4, 2, 1));
  EXPECT_EQ(up.output_shape({1, 2, 4, 4, 4}), (Shape5{1, 3, 8, 8, 8}));
}

TEST(ConvTranspose3d, MatchesNaiveScatter) {
  ConvTranspose3d<double> up(conv_spec(LayerKind::conv_transpose3d, 3, 2, 4, 2, 1));
  up.weight().value = normal(up.weight().shape(), 7);
  auto x = normal({2, 3, 3, 4, 2}, 8);
  EXPECT_LE(max_rel_diff(up.forward(x, Mode::train), naive_conv_transpose(x, up.weight().value, 2, 1)), 1e-12);
}

TEST(ConvTranspose3d, ChannelMismatchIsShapeError) {
  ConvTranspose3d<double> up(conv_spec(LayerKind::conv_transpose3d, 2, 1, 4, 2, 1));
  expect_error(Errc::shape, [&] { up.forward(Tensor5<double>({1, 3, 2, 2, 2}), Mode::train); });
}

TEST(ConvTranspose3d, AdjointOfConvolution) {
  // <conv(x; W), y> = <x, conv_transpose(y; W)> with the weight shared: the
  // transposed layer maps out -> in channels, so its weight is (out, in, k).
  std::mt19937_64 rng(9);
  const std::size_t configs[][6] = {{2, 3, 3, 1, 1, 5}, {3, 2, 4, 2, 1, 8}, {1, 4, 2, 2, 0, 6}, {2, 2, 3, 2, 1, 7}};
  for (const auto& c : configs) {
    const std::size_t in = c[0], out = c[1], k = c[2], s = c[3], p = c[4], e = c[5];
    Conv3d<double> conv(conv_spec(LayerKind::conv3d, in, out, k, s, p));
    ConvTranspose3d<double> up(conv_spec(LayerKind::conv_transpose3d, out, in, k, s, p));
    fill_normal(conv.weight().value, rng);
    up.weight().value = conv.weight().value;
    auto x = normal({2, in, e, e, e}, rng());
    auto cx = conv.forward(x, Mode::train);
    auto y = normal(cx.shape(), rng());
    auto ty = up.forward(y, Mode::train);
    ASSERT_EQ(ty.shape(), x.shape());
    const double lhs = dot(cx, y), rhs = dot(x, ty);
    EXPECT_LE(std::abs(lhs - rhs) / std::abs(lhs), 1e-10) << "k=" << k << " s=" << s << " p=" << p;
  }
}

TEST(ShapeFormulas, EnumeratedKernelStridePadding) {
  for (std::size_t k = 1; k <= 4; ++k)
    for (std::size_t s = 1; s <= 2; ++s)
      for (std::size_t p = 0; p <= 1; ++p)
        for (std::size_t in = 1; in <= 7; ++in) {
          // Count window positions directly.
          std::size_t count = 0;
          for (std::size_t start = 0; start + k <= in + 2 * p; start += s) ++count;
          EXPECT_EQ(conv_out_extent(in, k, s, p), count);
          if (count > 0) {
            Conv3d<double> conv(conv_spec(LayerKind::conv3d, 1, 1, k, s, p));
            EXPECT_EQ(conv.forward(Tensor5<double>({1, 1, in, in, in}), Mode::train).shape(),
                      (Shape5{1, 1, count, count, count}));
          }
          const long full = long(in - 1) * long(s) + long(k) - 2 * long(p);
          EXPECT_EQ(conv_transpose_out_extent(in, k, s, p), std::size_t(std::max(0L, full)));
          if (full >= 1) {
            ConvTranspose3d<double> up(conv_spec(LayerKind::conv_transpose3d, 1, 1, k, s, p));
            auto y = up.forward(Tensor5<double>({1, 1, in, in, in}), Mode::train);
            const auto f = std::size_t(full);
            EXPECT_EQ(y.shape(), (Shape5{1, 1, f, f, f}));
            // A convolution with the same (k, s, p) maps the transposed size back.
            EXPECT_EQ(conv_out_extent(f, k, s, p), in);
          }
        }
}

TEST(BatchNorm3d, StandardizedInputPassesThrough) {
  LayerSpec spec;
  spec.kind = LayerKind::batchnorm3d;
  spec.in_channels = 1;
  BatchNorm3d<double> bn(spec);
  Tensor5<double> x({2, 1, 1, 1, 2}, std::vector<double>{1, -1, 1, -1});
  auto y = bn.forward(x, Mode::train);
  const double f = 1.0 / std::sqrt(1.0 + spec.eps);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i] * f, 1e-15);
  EXPECT_NEAR(y[0], x[0], 1e-5);
}

TEST(BatchNorm3d, ConstantChannelGivesBeta) {
  LayerSpec spec;
  spec.kind = LayerKind::batchnorm3d;
  spec.in_channels = 2;
  BatchNorm3d<double> bn(spec);
  bn.beta().value[0] = 0.25;
  bn.beta().value[1] = -3.0;
  Tensor5<double> x({3, 2, 2, 2, 2}, 7.0);
  auto y = bn.forward(x, Mode::train);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_EQ(y(n, 0, i / 4, (i / 2) % 2, i % 2), 0.25);
      EXPECT_EQ(y(n, 1, i / 4, (i / 2) % 2, i % 2), -3.0);
    }
}

TEST(BatchNorm3d, RandomBatchMoments) {
  LayerSpec spec;
  spec.kind = LayerKind::batchnorm3d;
  spec.in_channels = 3;
  BatchNorm3d<double> bn(spec);
  std::mt19937_64 rng(10);
  Tensor5<double> x({4, 3, 3, 3, 3});
  fill_normal(x, rng, 5.0, 3.0);
  auto y = bn.forward(x, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    const std::size_t count = 4 * 27;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 27; ++i) {
        const double v = y[(n * 3 + c) * 27 + i];
        s += v;
        ss += v * v;
      }
    const double mean = s / count, var = ss / count - mean * mean;
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_LE(std::abs(var - 1.0), 1e-4);
  }
}

TEST(BatchNorm3d, RunningStatisticsAndEvalMode) {
  LayerSpec spec;
  spec.kind = LayerKind::batchnorm3d;
  spec.in_channels = 1;
  spec.momentum = 0.1;
  BatchNorm3d<double> bn(spec);
  Tensor5<double> x({1, 1, 1, 1, 4}, std::vector<double>{1, 2, 3, 6});
  bn.forward(x, Mode::train);
  // mean 3, unbiased variance 14/3
  EXPECT_NEAR(bn.running_mean()[0], 0.3, 1e-15);
  EXPECT_NEAR(bn.running_var()[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);
  bn.running_mean()[0] = 2.0;
  bn.running_var()[0] = 4.0;
  auto y = bn.forward(x, Mode::eval);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], (x[i] - 2.0) / std::sqrt(4.0 + spec.eps), 1e-15);
  // Running statistics do not move in eval mode.
  EXPECT_EQ(bn.running_mean()[0], 2.0);
}

TEST(BatchNorm3d, SingleValuePerChannelIsDegenerate) {
  LayerSpec spec;
  spec.kind = LayerKind::batchnorm3d;
  spec.in_channels = 4;
  BatchNorm3d<double> bn(spec);
  expect_error(Errc::degenerate_batch, [&] { bn.forward(Tensor5<double>({1, 4, 1, 1, 1}), Mode::train); });
  EXPECT_NO_THROW(bn.forward(Tensor5<double>({1, 4, 1, 1, 1}), Mode::eval));
}

TEST(Activations, ClosedFormValues) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  EXPECT_EQ(Activation<double>::apply(s, -1.0), 0.0);
  EXPECT_EQ(Activation<double>::apply(s, 0.0), 0.0);
  EXPECT_EQ(Activation<double>::apply(s, 2.0), 2.0);
  s.kind = LayerKind::leaky_relu;
  EXPECT_DOUBLE_EQ(Activation<double>::apply(s, -1.0), -0.2);
  EXPECT_EQ(Activation<double>::apply(s, 3.0), 3.0);
  s.kind = LayerKind::tanh;
  EXPECT_EQ(Activation<double>::apply(s, 0.0), 0.0);
  s.kind = LayerKind::sigmoid;
  EXPECT_EQ(Activation<double>::apply(s, 0.0), 0.5);
  s.kind = LayerKind::affine;
  s.scale = 0.5;
  s.shift = 0.5;
  EXPECT_EQ(Activation<double>::apply(s, -1.0), 0.0);
  EXPECT_EQ(Activation<double>::apply(s, 1.0), 1.0);
}

TEST(Activations, DefaultLeakySlope) {
  LayerSpec s;
  EXPECT_EQ(s.slope, 0.2);
}

TEST(Activations, NonActivationKindRejected) {
  expect_error(Errc::config, [] { Activation<double>(conv_spec(LayerKind::conv3d, 1, 1, 1, 1, 0)); });
}

TEST(Backward, SumOfReluAtPositiveInputs) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  Sequential<double> net({s});
  Tensor5<double> x({1, 2, 2, 2, 2}, 0.7);
  net.forward(x, Mode::train);
  auto g = net.backward(Tensor5<double>(x.shape(), 1.0));
  for (double v : g.values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, BceAtZeroLogitTargetOne) {
  auto r = bce_with_logits(Tensor5<double>({1, 1, 1, 1, 1}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(r.grad[0], -0.5);
  EXPECT_NEAR(r.value, std::log(2.0), 1e-15);
}

TEST(Backward, BeforeForwardIsGraphError) {
  Sequential<double> net({conv_spec(LayerKind::conv3d, 1, 1, 2, 1, 0)});
  expect_error(Errc::graph, [&] { net.backward(Tensor5<double>({1, 1, 1, 1, 1})); });
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 1, 1, 2, 1, 0));
  expect_error(Errc::graph, [&] { conv.backward(Tensor5<double>({1, 1, 1, 1, 1})); });
  LayerSpec bn;
  bn.kind = LayerKind::batchnorm3d;
  BatchNorm3d<double> b(bn);
  expect_error(Errc::graph, [&] { b.backward(Tensor5<double>({1, 1, 1, 1, 1})); });
  LayerSpec t;
  t.kind = LayerKind::tanh;
  Activation<double> a(t);
  expect_error(Errc::graph, [&] { a.backward(Tensor5<double>({1, 1, 1, 1, 1})); });
}

TEST(Backward, GradientsAccumulate) {
  Conv3d<double> conv(conv_spec(LayerKind::conv3d, 1, 1, 1, 1, 0));
  conv.weight().value[0] = 1.0;
  Tensor5<double> x({1, 1, 1, 1, 2}, std::vector<double>{1.0, 2.0});
  Tensor5<double> ones(x.shape(), 1.0);
  conv.forward(x, Mode::train);
  conv.backward(ones);
  conv.forward(x, Mode::train);
  conv.backward(ones);
  EXPECT_EQ(conv.weight().grad[0], 6.0);
}

namespace {

void expect_grad_ok(Sequential<double>& net, const Tensor5<double>& x, std::uint64_t seed, double gap_note = 0.0,
                    Mode mode = Mode::train) {
  auto r = grad_check(net, x, 100, seed, 1e-4, mode);
  EXPECT_EQ(r.checked, 100u);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst << " gap " << gap_note;
}

}  // namespace

TEST(GradCheck, Conv3dWithBias) {
  std::mt19937_64 rng(11);
  Sequential<double> net({conv_spec(LayerKind::conv3d, 2, 3, 3, 2, 1, true)});
  test::randomize_parameters(net, rng);
  expect_grad_ok(net, random_input({2, 2, 5, 5, 5}, 12), 13);
}

TEST(GradCheck, ConvTranspose3dWithBias) {
  std::mt19937_64 rng(14);
  Sequential<double> net({conv_spec(LayerKind::conv_transpose3d, 3, 2, 4, 2, 1, true)});
  test::randomize_parameters(net, rng);
  expect_grad_ok(net, random_input({2, 3, 3, 3, 3}, 15), 16);
}

TEST(GradCheck, BatchNormTrainMode) {
  std::mt19937_64 rng(17);
  LayerSpec bn;
  bn.kind = LayerKind::batchnorm3d;
  bn.in_channels = 3;
  Sequential<double> net({bn});
  test::randomize_parameters(net, rng);
  expect_grad_ok(net, random_input({2, 3, 2, 3, 2}, 18), 19);
}

TEST(GradCheck, BatchNormEvalMode) {
  std::mt19937_64 rng(20);
  LayerSpec bn;
  bn.kind = LayerKind::batchnorm3d;
  bn.in_channels = 2;
  Sequential<double> net({bn});
  test::randomize_parameters(net, rng);
  auto& layer = dynamic_cast<BatchNorm3d<double>&>(net[0]);
  layer.running_mean()[0] = 0.3;
  layer.running_var()[1] = 2.0;
  expect_grad_ok(net, random_input({1, 2, 2, 2, 2}, 21), 22, 0.0, Mode::eval);
}

TEST(GradCheck, ElementwiseActivations) {
  const LayerKind kinds[] = {LayerKind::relu, LayerKind::leaky_relu, LayerKind::tanh, LayerKind::sigmoid,
                             LayerKind::affine};
  std::uint64_t seed = 23;
  for (LayerKind k : kinds) {
    LayerSpec s;
    s.kind = k;
    s.scale = -1.5;
    s.shift = 0.25;
    Sequential<double> net({s});
    // Keep inputs clear of the relu kink by more than the step.
    expect_grad_ok(net, random_input({2, 1, 3, 3, 3}, seed, 1e-2), seed + 1);
    seed += 2;
  }
}

TEST(GradCheck, GeneratorLikeStack) {
  std::mt19937_64 rng(31);
  LayerSpec bn;
  bn.kind = LayerKind::batchnorm3d;
  bn.in_channels = 4;
  LayerSpec relu;
  relu.kind = LayerKind::relu;
  LayerSpec tanh;
  tanh.kind = LayerKind::tanh;
  Sequential<double> net({conv_spec(LayerKind::conv_transpose3d, 3, 4, 4, 1, 0), bn, relu,
                          conv_spec(LayerKind::conv_transpose3d, 4, 1, 4, 2, 1), tanh});
  test::randomize_parameters(net, rng);
  expect_grad_ok(net, random_input({2, 3, 1, 1, 1}, 32), 33);
}

TEST(GradCheck, DiscriminatorLikeStack) {
  std::mt19937_64 rng(34);
  LayerSpec leaky;
  leaky.kind = LayerKind::leaky_relu;
  LayerSpec bn;
  bn.kind = LayerKind::batchnorm3d;
  bn.in_channels = 4;
  Sequential<double> net({conv_spec(LayerKind::conv3d, 1, 2, 4, 2, 1), leaky,
                          conv_spec(LayerKind::conv3d, 2, 4, 4, 2, 1), bn, leaky,
                          conv_spec(LayerKind::conv3d, 4, 1, 2, 1, 0)});
  test::randomize_parameters(net, rng);
  expect_grad_ok(net, random_input({2, 1, 8, 8, 8}, 35), 36);
}

namespace {

// Independent scalar Adam recurrence.
struct ScalarAdam {
  double a, b1, b2, eps, m = 0, v = 0;
  int t = 0;
  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return w - a * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST(Adam, FirstStepWithUnitGradient) {
  Parameter<double> p({1, 1, 1, 1, 1});
  p.grad[0] = 1.0;
  adam_step<double>({&p}, AdamSettings{2e-4, 0.5, 0.999, 1e-8});
  EXPECT_NEAR(p.value[0], -2e-4 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(p.value[0], -1.99999e-4, 1e-9);
  EXPECT_EQ(p.step_count, 1u);
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_GE(p.adam_v[0], 0.0);
}

TEST(Adam, ZeroGradientLeavesWeight) {
  Parameter<double> p({1, 1, 1, 1, 3}, 0.75);
  adam_step<double>({&p}, AdamSettings{});
  for (double v : p.value.values()) EXPECT_EQ(v, 0.75);
}

TEST(Adam, QuadraticBowlMatchesScalarOracle) {
  const AdamSettings s{2e-4, 0.5, 0.999, 1e-8};
  Parameter<double> p({1, 1, 1, 1, 1}, 1.0);
  ScalarAdam oracle{s.learning_rate, s.beta1, s.beta2, s.epsilon};
  double w = 1.0;
  for (int k = 0; k < 2; ++k) {
    const double before = p.value[0];
    p.grad[0] = p.value[0];  // f = w^2 / 2
    adam_step<double>({&p}, s);
    w = oracle.step(w, w);
    EXPECT_NEAR(p.value[0], w, 1e-15);
    EXPECT_LT(p.value[0], before);
    EXPECT_LE(std::abs(p.value[0] - before), s.learning_rate * (1 + 1e-6));
  }
}

TEST(Adam, ConstantGradientStepBound) {
  const AdamSettings s{2e-4, 0.5, 0.999, 1e-8};
  Parameter<double> p({1, 1, 1, 1, 1});
  ScalarAdam oracle{s.learning_rate, s.beta1, s.beta2, s.epsilon};
  double w = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double before = p.value[0];
    p.grad[0] = 3.0;
    adam_step<double>({&p}, s);
    w = oracle.step(w, 3.0);
    EXPECT_NEAR(p.value[0], w, 1e-15);
    EXPECT_LE(std::abs(p.value[0] - before), s.learning_rate * (1 + 1e-6));
  }
}

TEST(Adam, NonFiniteGradientIsDivergenceAndLeavesState) {
  Parameter<double> a({1, 1, 1, 1, 1}, 1.0), b({1, 1, 1, 1, 1}, 2.0);
  a.grad[0] = 1.0;
  b.grad[0] = std::nan("");
  expect_error(Errc::divergence, [&] { adam_step(std::vector<Parameter<double>*>{&a, &b}, AdamSettings{}); });
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(a.step_count, 0u);
}

TEST(Determinism, IdenticalSeedsGiveBitwiseIdenticalForward) {
  auto build = [] {
    std::mt19937_64 rng(40);
    LayerSpec bn;
    bn.kind = LayerKind::batchnorm3d;
    bn.in_channels = 4;
    LayerSpec relu;
    relu.kind = LayerKind::relu;
    Sequential<float> net({conv_spec(LayerKind::conv_transpose3d, 8, 4, 4, 1, 0), bn, relu,
                           conv_spec(LayerKind::conv_transpose3d, 4, 1, 4, 2, 1)});
    for (auto& [n, p] : net.parameters()) fill_normal(p->value, rng, 0.0, 0.02);
    return net;
  };
  auto a = build(), b = build();
  std::mt19937_64 rng(41);
  Tensor5<float> z({3, 8, 2, 2, 2});
  fill_normal(z, rng);
  auto ya = a.forward(z, Mode::train), yb = b.forward(z, Mode::train);
  EXPECT_EQ(ya, yb);
  EXPECT_TRUE(ya.all_finite());
}

TEST(Tensor5, DataMustMatchShape) {
  expect_error(Errc::shape, [] { Tensor5<double>({1, 1, 2, 2, 2}, std::vector<double>(7)); });
  Tensor5<double> t({2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 720u);
  EXPECT_EQ(t.index(1, 2, 3, 4, 5), 719u);
}
