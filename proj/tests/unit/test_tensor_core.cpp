#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "weedsense/core/gradcheck.hpp"
#include "weedsense/core/init.hpp"
#include "weedsense/core/ops.hpp"

using namespace weedsense;

namespace {

using VD = Var<double>;
using VF = Var<float>;

VD cd(TensorD t) { return VD::constant(std::move(t)); }

TensorD random_tensor(Shape s, std::uint64_t seed, double bound = 1.0) {
  return uniform_tensor<double>(std::move(s), bound, seed);
}

// Brute-force cross-correlation oracle.
TensorD naive_conv(const TensorD& x, const TensorD& w, int stride, int pad, int groups) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const Index ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  const Index coutg = cout / groups;
  TensorD y({n, cout, ho, wo});
  (void)cin;
  for (Index b = 0; b < n; ++b)
    for (Index co = 0; co < cout; ++co)
      for (Index oh = 0; oh < ho; ++oh)
        for (Index ow = 0; ow < wo; ++ow) {
          double acc = 0;
          const Index g = co / coutg;
          for (Index ci = 0; ci < cg; ++ci)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Index ih = oh * stride - pad + i, iw = ow * stride - pad + j;
                if (ih < 0 || iw < 0 || ih >= h || iw >= wd) continue;
                acc += x.at(b, g * cg + ci, ih, iw) * w.at(co, ci, i, j);
              }
          y.at(b, co, oh, ow) = acc;
        }
  return y;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  a.require_same_shape(b, "compare");
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Tensor, ShapeInvariants) {
  TensorF t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  EXPECT_THROW(Shape({2, 0, 3}), DimensionError);
  EXPECT_THROW(TensorF(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW((void)t.reshaped({5, 5}), DimensionError);
}

TEST(Conv2d, IdentityKernel) {
  VD y = conv2d(cd(TensorD::ones({1, 1, 3, 3})), cd(TensorD::ones({1, 1, 1, 1})), VD(), {});
  EXPECT_EQ(y.shape(), Shape({1, 1, 3, 3}));
  for (Index i = 0; i < 9; ++i) EXPECT_EQ(y.value()[i], 1.0);
}

TEST(Conv2d, OnesKernelPadded) {
  VD y = conv2d(cd(TensorD::ones({1, 1, 3, 3})), cd(TensorD::ones({1, 1, 3, 3})), VD(), {1, 1, 1});
  const TensorD oracle = naive_conv(TensorD::ones({1, 1, 3, 3}), TensorD::ones({1, 1, 3, 3}), 1, 1, 1);
  EXPECT_EQ(max_abs_diff(y.value(), oracle), 0.0);
  EXPECT_EQ(y.value().at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(y.value().at(0, 0, 0, 1), 6.0);
  EXPECT_EQ(y.value().at(0, 0, 0, 0), 4.0);
}

TEST(Conv2d, DepthwiseIdentity) {
  TensorD x = random_tensor({1, 2, 4, 4}, 1);
  TensorD w({2, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1;
  w.at(1, 0, 1, 1) = 1;
  VD y = conv2d(cd(x), cd(w), VD(), {1, 1, 2});
  EXPECT_EQ(max_abs_diff(y.value(), x), 0.0);
}

TEST(Conv2d, MatchesNaiveOracle) {
  struct C {
    Index cin, cout, k;
    int s, p, g;
  };
  for (C c : {C{3, 4, 3, 1, 1, 1}, C{3, 5, 3, 2, 1, 1}, C{4, 4, 3, 1, 1, 4}, C{6, 6, 5, 2, 2, 6}, C{4, 6, 3, 2, 0, 2},
              C{5, 7, 1, 1, 0, 1}, C{4, 8, 1, 2, 0, 1}}) {
    TensorD x = random_tensor({2, c.cin, 9, 7}, 3);
    TensorD w = random_tensor({c.cout, c.cin / c.g, c.k, c.k}, 4);
    VD y = conv2d(cd(x), cd(w), VD(), {c.s, c.p, c.g});
    EXPECT_LT(max_abs_diff(y.value(), naive_conv(x, w, c.s, c.p, c.g)), 1e-12);
  }
}

TEST(Conv2d, ErrorsNameAxis) {
  try {
    conv2d(cd(TensorD({1, 3, 4, 4})), cd(TensorD({2, 3, 3, 3})), VD(), {1, 0, 2});
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis"), std::string::npos);
  }
  EXPECT_THROW(conv2d(cd(TensorD({1, 2, 2, 2})), cd(TensorD({1, 2, 3, 3})), VD(), {}), DimensionError);
}

TEST(Conv2d, FloatMatchesDouble) {
  TensorD x = random_tensor({1, 8, 20, 20}, 5);
  TensorD w = random_tensor({16, 8, 3, 3}, 6);
  VF yf = conv2d(VF::constant(x.cast<float>()), VF::constant(w.cast<float>()), VF(), {2, 1, 1});
  VD yd = conv2d(cd(x), cd(w), VD(), {2, 1, 1});
  EXPECT_LT(max_abs_diff(yf.value().cast<double>(), yd.value()), 1e-4);
}

TEST(BatchNorm, EvalIdentity) {
  TensorD rm = TensorD::zeros({3}), rv = TensorD::ones({3});
  TensorD x = random_tensor({2, 3, 2, 2}, 7);
  VD y = batch_norm2d(cd(x), cd(TensorD::ones({3})), cd(TensorD::zeros({3})), {&rm, &rv}, Mode::kEval);
  EXPECT_LT(max_abs_diff(y.value(), x), 1e-5);
}

TEST(BatchNorm, TrainConstantInputGivesZeros) {
  TensorD rm = TensorD::zeros({2}), rv = TensorD::ones({2});
  VD y = batch_norm2d(cd(TensorD::full({2, 2, 3, 3}, 4.0)), cd(TensorD::ones({2})), cd(TensorD::zeros({2})),
                      {&rm, &rv}, Mode::kTrain);
  EXPECT_EQ(y.value().vec().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(rm[0], 0.4, 1e-12);
  EXPECT_NEAR(rv[0], 0.9, 1e-12);
}

TEST(BatchNorm, TrainStatsMatchNaiveLoops) {
  TensorD rm = TensorD::zeros({4}), rv = TensorD::ones({4});
  TensorD x = random_tensor({2, 4, 5, 5}, 8, 3.0);
  x.vec().array() += 2.0;
  VD y = batch_norm2d(cd(x), cd(TensorD::ones({4})), cd(TensorD::zeros({4})), {&rm, &rv}, Mode::kTrain);
  for (Index c = 0; c < 4; ++c) {
    double s = 0, ss = 0, xs = 0, xss = 0;
    for (Index n = 0; n < 2; ++n)
      for (Index h = 0; h < 5; ++h)
        for (Index w = 0; w < 5; ++w) {
          s += y.value().at(n, c, h, w);
          xs += x.at(n, c, h, w);
        }
    const double mu = s / 50, xmu = xs / 50;
    for (Index n = 0; n < 2; ++n)
      for (Index h = 0; h < 5; ++h)
        for (Index w = 0; w < 5; ++w) {
          ss += std::pow(y.value().at(n, c, h, w) - mu, 2);
          xss += std::pow(x.at(n, c, h, w) - xmu, 2);
        }
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_NEAR(ss / 50, 1.0, 1e-5);
    EXPECT_NEAR(rm[c], 0.1 * xmu, 1e-12);
    EXPECT_NEAR(rv[c], 0.9 + 0.1 * xss / 49, 1e-12);
  }
}

TEST(BatchNorm, RejectsSingleValueTrainAndChannelMismatch) {
  TensorD rm = TensorD::zeros({2}), rv = TensorD::ones({2});
  EXPECT_THROW(batch_norm2d(cd(TensorD({1, 2, 1, 1})), cd(TensorD::ones({2})), cd(TensorD::zeros({2})), {&rm, &rv},
                            Mode::kTrain),
               DimensionError);
  EXPECT_THROW(batch_norm2d(cd(TensorD({1, 3, 2, 2})), cd(TensorD::ones({2})), cd(TensorD::zeros({2})), {&rm, &rv},
                            Mode::kEval),
               DimensionError);
}

TEST(Activation, Examples) {
  VD r = relu(cd(TensorD({3}, {-1.0, 0.0, 2.0})));
  EXPECT_EQ(r.value()[0], 0.0);
  EXPECT_EQ(r.value()[1], 0.0);
  EXPECT_EQ(r.value()[2], 2.0);
  EXPECT_EQ(sigmoid(cd(TensorD({1}, {0.0}))).value()[0], 0.5);
  // erf oracle: gelu(1) = 0.5 * (1 + erf(1/sqrt 2)) with erf(0.70710678) = 0.682689492137086.
  EXPECT_NEAR(gelu(cd(TensorD({1}, {1.0}))).value()[0], 0.5 * (1 + 0.682689492137086), 1e-6);
}

TEST(LayerNorm, Examples) {
  const VD g = cd(TensorD::ones({3})), b = cd(TensorD::zeros({3}));
  VD y = layer_norm(cd(TensorD({3}, {1.0, 1.0, 1.0})), g, b);
  EXPECT_EQ(y.value().vec().cwiseAbs().maxCoeff(), 0.0);
  VD y2 = layer_norm(cd(TensorD({2}, {0.0, 2.0})), cd(TensorD::ones({2})), cd(TensorD::zeros({2})));
  EXPECT_NEAR(y2.value()[0], -1.0, 1e-5);
  EXPECT_NEAR(y2.value()[1], 1.0, 1e-5);
  VD y3 = layer_norm(cd(TensorD({2}, {3.0, -7.0})), cd(TensorD::zeros({2})), cd(TensorD::full({2}, 5.0)));
  EXPECT_EQ(y3.value()[0], 5.0);
  EXPECT_EQ(y3.value()[1], 5.0);
  EXPECT_THROW(layer_norm(cd(TensorD({2, 4})), g, b), DimensionError);
}

TEST(Linear, Examples) {
  TensorD x = random_tensor({2, 4}, 9);
  TensorD eye({4, 4});
  for (Index i = 0; i < 4; ++i) eye[i * 5] = 1;
  EXPECT_EQ(max_abs_diff(linear(cd(x), cd(eye), cd(TensorD::zeros({4}))).value(), x), 0.0);
  VD y = linear(cd(TensorD({2}, {2.0, 3.0})), cd(TensorD({1, 2}, {1.0, 1.0})), cd(TensorD({1}, {1.0})));
  EXPECT_EQ(y.shape(), Shape({1}));
  EXPECT_EQ(y.value()[0], 6.0);
  EXPECT_THROW(linear(cd(TensorD({2, 3})), cd(TensorD({1, 2})), VD()), DimensionError);
}

TEST(PixelShuffle, Examples) {
  TensorD x = random_tensor({2, 3, 4, 5}, 10);
  EXPECT_EQ(max_abs_diff(pixel_shuffle(cd(x), 1).value(), x), 0.0);
  VD y = pixel_shuffle(cd(TensorD({1, 4, 1, 1}, {1.0, 2.0, 3.0, 4.0})), 2);
  EXPECT_EQ(y.shape(), Shape({1, 1, 2, 2}));
  EXPECT_EQ(y.value().at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(y.value().at(0, 0, 0, 1), 2.0);
  EXPECT_EQ(y.value().at(0, 0, 1, 0), 3.0);
  EXPECT_EQ(y.value().at(0, 0, 1, 1), 4.0);
  EXPECT_THROW(pixel_shuffle(cd(TensorD({1, 6, 2, 2})), 2), DimensionError);
}

TEST(PixelShuffle, IndexFormulaAndRoundTrip) {
  for (int r : {1, 2, 3, 4}) {
    for (Index c : {1, 2, 5}) {
      TensorD x = random_tensor({2, c * r * r, 3, 2}, 11 + r);
      VD y = pixel_shuffle(cd(x), r);
      for (Index n = 0; n < 2; ++n)
        for (Index ch = 0; ch < c; ++ch)
          for (Index h = 0; h < 3; ++h)
            for (Index w = 0; w < 2; ++w)
              for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j)
                  ASSERT_EQ(y.value().at(n, ch, h * r + i, w * r + j), x.at(n, ch * r * r + i * r + j, h, w));
      EXPECT_EQ(max_abs_diff(pixel_unshuffle(y, r).value(), x), 0.0);
      TensorD z = random_tensor({1, c, 3 * r, 2 * r}, 17);
      EXPECT_EQ(max_abs_diff(pixel_shuffle(pixel_unshuffle(cd(z), r), r).value(), z), 0.0);
    }
  }
}

TEST(AdaptiveAvgPool, Examples) {
  TensorD x = random_tensor({1, 2, 3, 4}, 12);
  EXPECT_EQ(max_abs_diff(adaptive_avg_pool(cd(x), 3, 4).value(), x), 0.0);
  EXPECT_EQ(adaptive_avg_pool(cd(TensorD({1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0})), 1, 1).value()[0], 4.0);
  VD c = adaptive_avg_pool(cd(TensorD::full({1, 1, 5, 7}, 2.5)), 2, 3);
  for (Index i = 0; i < c.value().numel(); ++i) EXPECT_DOUBLE_EQ(c.value()[i], 2.5);
  EXPECT_THROW(adaptive_avg_pool(cd(x), 4, 1), DimensionError);
  EXPECT_THROW(adaptive_avg_pool(cd(x), 1, 0), DimensionError);
}

TEST(SEBlock, ZeroWeightsGiveHalf) {
  TensorD x = random_tensor({2, 8, 3, 3}, 13);
  VD y = se_block(cd(x), cd(TensorD({2, 8})), cd(TensorD({8, 2})));
  for (Index i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.value()[i], 0.5 * x[i]);
}

TEST(SEBlock, MatchesLoopOracleAndIsPerChannel) {
  const Index n = 2, c = 8, hw = 9;
  TensorD x = random_tensor({n, c, 3, 3}, 14, 2.0);
  TensorD wr = random_tensor({2, 8}, 15), we = random_tensor({8, 2}, 16);
  VD y = se_block(cd(x), cd(wr), cd(we));
  for (Index b = 0; b < n; ++b) {
    std::vector<double> pooled(c), hidden(2);
    for (Index ch = 0; ch < c; ++ch) {
      for (Index p = 0; p < hw; ++p) pooled[ch] += x[(b * c + ch) * hw + p] / hw;
    }
    for (Index r = 0; r < 2; ++r) {
      for (Index ch = 0; ch < c; ++ch) hidden[r] += wr[r * c + ch] * pooled[ch];
      hidden[r] = std::max(0.0, hidden[r]);
    }
    for (Index ch = 0; ch < c; ++ch) {
      double z = 0;
      for (Index r = 0; r < 2; ++r) z += we[ch * 2 + r] * hidden[r];
      const double s = 1.0 / (1.0 + std::exp(-z));
      for (Index p = 0; p < hw; ++p) {
        const Index i = (b * c + ch) * hw + p;
        EXPECT_NEAR(y.value()[i], s * x[i], 1e-6);
        EXPECT_NEAR(y.value()[i] / x[i], y.value()[(b * c + ch) * hw] / x[(b * c + ch) * hw], 1e-12);
      }
    }
  }
  EXPECT_THROW(se_block(cd(TensorD({1, 6, 2, 2})), cd(TensorD({1, 6})), cd(TensorD({6, 1}))), DimensionError);
}

TEST(Attention, SingleTokenCollapse) {
  const Index d = 8;
  TensorD x = random_tensor({3, 1, d}, 20);
  TensorD wq = random_tensor({d, d}, 21), wk = random_tensor({d, d}, 22);
  TensorD wv = random_tensor({d, d}, 23), wo = random_tensor({d, d}, 24);
  VD y = multi_head_attention(cd(x), 4, cd(wq), cd(wk), cd(wv), cd(wo));
  VD expected = linear(linear(cd(x), cd(wv), VD()), cd(wo), VD());
  EXPECT_LT(max_abs_diff(y.value(), expected.value()), 1e-12);
  TensorD wq2 = random_tensor({d, d}, 25, 10.0);
  VD y2 = multi_head_attention(cd(x), 4, cd(wq2), cd(wk), cd(wv), cd(wo));
  EXPECT_LT(max_abs_diff(y2.value(), y.value()), 1e-12);
}

TEST(Attention, WeightsSumToOneAndMatchNaiveOracle) {
  const Index n = 2, t = 3, d = 8, heads = 2, dh = 4;
  TensorD x = random_tensor({n, t, d}, 30);
  TensorD wq = random_tensor({d, d}, 31), wk = random_tensor({d, d}, 32);
  TensorD wv = random_tensor({d, d}, 33), wo = random_tensor({d, d}, 34);
  TensorD p = attention_weights(x, heads, wq, wk);
  for (Index r = 0; r < n * heads * t; ++r) {
    double s = 0;
    for (Index j = 0; j < t; ++j) s += p[r * t + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  auto proj = [&](const TensorD& w, Index b, Index tok, Index o) {
    double acc = 0;
    for (Index i = 0; i < d; ++i) acc += w[o * d + i] * x[(b * t + tok) * d + i];
    return acc;
  };
  VD y = multi_head_attention(cd(x), heads, cd(wq), cd(wk), cd(wv), cd(wo));
  for (Index b = 0; b < n; ++b) {
    std::vector<double> concat(t * d);
    for (Index h = 0; h < heads; ++h) {
      for (Index i = 0; i < t; ++i) {
        std::vector<double> s(t);
        double m = -1e300, z = 0;
        for (Index j = 0; j < t; ++j) {
          for (Index e = 0; e < dh; ++e) s[j] += proj(wq, b, i, h * dh + e) * proj(wk, b, j, h * dh + e);
          s[j] /= std::sqrt(double(dh));
          m = std::max(m, s[j]);
        }
        for (Index j = 0; j < t; ++j) z += std::exp(s[j] - m);
        for (Index e = 0; e < dh; ++e) {
          double acc = 0;
          for (Index j = 0; j < t; ++j) acc += std::exp(s[j] - m) / z * proj(wv, b, j, h * dh + e);
          concat[i * d + h * dh + e] = acc;
        }
      }
    }
    for (Index i = 0; i < t; ++i)
      for (Index o = 0; o < d; ++o) {
        double acc = 0;
        for (Index e = 0; e < d; ++e) acc += wo[o * d + e] * concat[i * d + e];
        EXPECT_NEAR(y.value()[(b * t + i) * d + o], acc, 1e-5);
      }
  }
  EXPECT_THROW(multi_head_attention(cd(x), 3, cd(wq), cd(wk), cd(wv), cd(wo)), ConfigError);
}

TEST(Dropout, Examples) {
  TensorD x = random_tensor({4, 5}, 40);
  EXPECT_EQ(max_abs_diff(dropout(cd(x), 0.5, Mode::kEval, 1).value(), x), 0.0);
  EXPECT_EQ(max_abs_diff(dropout(cd(x), 0.0, Mode::kTrain, 1).value(), x), 0.0);
  EXPECT_THROW(dropout(cd(x), 1.0, Mode::kTrain, 1), ConfigError);

  TensorD big = TensorD::ones({1000, 200});
  VD y = dropout(cd(big), 0.5, Mode::kTrain, 1234);
  const double survivors = (y.value().vec().array() != 0.0).cast<double>().mean();
  EXPECT_NEAR(survivors, 0.5, 0.02);
  EXPECT_NEAR(y.value().vec().mean(), 1.0, 0.03);
  VD y2 = dropout(cd(big), 0.5, Mode::kTrain, 1234);
  EXPECT_EQ(max_abs_diff(y.value(), y2.value()), 0.0);
}

TEST(Gradients, LinearMapAndUnreachedParameter) {
  ParameterStore<double> store;
  auto& w = store.add("w", random_tensor({2, 3}, 50));
  auto& unused = store.add("unused", random_tensor({4}, 51));
  TensorD x({1, 3}, {1.0, -2.0, 0.5});
  Tape<double> tape;
  VD loss = sum(linear(cd(x), param_var(w), VD()));
  auto g = gradients(tape, loss, store);
  for (Index o = 0; o < 2; ++o)
    for (Index i = 0; i < 3; ++i) EXPECT_EQ(g.at("w")[o * 3 + i], x[i]);
  EXPECT_EQ(g.at("unused").vec().cwiseAbs().maxCoeff(), 0.0);
  (void)unused;
}

TEST(Gradients, NonScalarLossAndFanOut) {
  ParameterStore<double> store;
  auto& a = store.add("a", TensorD({2}, {1.5, -0.5}));
  {
    Tape<double> tape;
    VD v = param_var(a);
    EXPECT_THROW(tape.backward(v), UsageError);
  }
  Tape<double> tape;
  VD v = param_var(a);
  VD loss = sum(add(mul(v, v), v));  // d/da = 2a + 1
  auto g = gradients(tape, loss);
  EXPECT_DOUBLE_EQ(g.at("a")[0], 4.0);
  EXPECT_DOUBLE_EQ(g.at("a")[1], 0.0);
}

TEST(Gradients, NoTapeRecordsNothing) {
  ParameterStore<double> store;
  auto& a = store.add("a", TensorD::ones({3}));
  VD y = relu(param_var(a));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Gradients, PrimitivesMatchFiniteDifferences) {
  for (const auto& c : primitive_gradient_checks()) {
    EXPECT_LE(c.report.max_rel_error(), 1e-4) << c.name;
    for (const auto& e : c.report.entries) EXPECT_GT(e.checked, 0) << c.name << "/" << e.name;
  }
}

TEST(Init, DeterministicAcrossCallsAndPrecisions) {
  TensorF a = kaiming_uniform<float>({4, 3, 3, 3}, 27, 77);
  TensorF b = kaiming_uniform<float>({4, 3, 3, 3}, 27, 77);
  TensorD c = kaiming_uniform<double>({4, 3, 3, 3}, 27, 77);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * a.numel()), 0);
  EXPECT_LT((a.cast<double>().vec() - c.vec()).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LE(c.vec().cwiseAbs().maxCoeff(), std::sqrt(6.0 / 27));
}

TEST(MacCounter, CountsConvAndLinear) {
  MacCounter counter;
  conv2d(cd(TensorD({2, 4, 6, 6})), cd(TensorD({8, 2, 3, 3})), VD(), {2, 1, 2});
  EXPECT_EQ(counter.macs(), 2 * 8 * 3 * 3 * (2 * 3 * 3));
  linear(cd(TensorD({5, 3})), cd(TensorD({7, 3})), VD());
  EXPECT_EQ(counter.macs(), 2 * 8 * 9 * 18 + 5 * 3 * 7);
}
