#include <gtest/gtest.h>

#include "weedsense/core/init.hpp"
#include "weedsense/encoder/encoder.hpp"

using namespace weedsense;

namespace {

using VD = Var<double>;
using VF = Var<float>;

template <typename Scalar>
LayerScope<Scalar> scope_of(ParameterStore<Scalar>& store, const std::string& prefix = "m", std::uint64_t seed = 3) {
  return {&store, seed, prefix};
}

VF input_f(Shape s, std::uint64_t seed = 11) { return VF::constant(uniform_tensor<float>(std::move(s), 1.0, seed)); }
VD input_d(Shape s, std::uint64_t seed = 11) { return VD::constant(uniform_tensor<double>(std::move(s), 1.0, seed)); }

double max_abs_diff(const TensorD& a, const TensorD& b) { return (a.vec() - b.vec()).cwiseAbs().maxCoeff(); }

UIBSpec uib(Index cin, Index cout, int stride, KernelConfig k = {}, bool se = true, double ls = 1e-5) {
  UIBSpec s;
  s.kernel_start = k.start;
  s.kernel_mid = k.mid;
  s.kernel_end = k.end;
  s.stride = stride;
  s.in_channels = cin;
  s.out_channels = cout;
  s.use_se = se;
  s.layer_scale_init = ls;
  return s;
}

const BranchSpec kMedium{{64, 64, 128}, {16, 32, 64, 128}, {2, 2, 4}, 6};
const BranchSpec kSmall{{32, 32, 64}, {8, 16, 32, 64}, {1, 1, 2}, 4};
const BranchSpec kTiny{{8, 8, 16}, {2, 4, 8, 16}, {1, 1, 2}, 6};

}  // namespace

TEST(KernelConfig, ParsesBothSpellingsAndRoundTrips) {
  EXPECT_EQ(KernelConfig::parse("S5-M3-E5"), (KernelConfig{5, 3, 5}));
  EXPECT_EQ(KernelConfig::parse("s1m3e0"), (KernelConfig{1, 3, 0}));
  for (const auto& k : KernelConfig::ablation_grid()) EXPECT_EQ(KernelConfig::parse(k.str()), k);
  EXPECT_EQ(KernelConfig::ablation_grid().size(), 7u);
  EXPECT_THROW(KernelConfig::parse("s2m3e0"), ConfigError);
  EXPECT_THROW(KernelConfig::parse("s0m5e0"), ConfigError);
  EXPECT_THROW(KernelConfig::parse("banana"), ConfigError);
}

TEST(DetailBranch, MediumAndSmallShapesAt512) {
  for (const auto& [channels, c3] : {std::pair{kMedium.detail_channels, Index{128}},
                                     std::pair{kSmall.detail_channels, Index{64}}}) {
    ParameterStore<float> store;
    DetailBranch<float> detail(scope_of(store), channels);
    VF y = detail(input_f({1, 3, 512, 512}), Mode::kEval);
    EXPECT_EQ(y.shape(), (Shape{1, c3, 64, 64}));
  }
}

TEST(DetailBranch, ZeroInputIsFiniteAndIndivisibleSizeRejected) {
  ParameterStore<double> store;
  DetailBranch<double> detail(scope_of(store), kTiny.detail_channels);
  VD y = detail(VD::constant(TensorD::zeros({2, 3, 32, 32})), Mode::kTrain);
  EXPECT_TRUE(y.value().all_finite());
  EXPECT_THROW(detail(input_d({1, 3, 36, 32}), Mode::kEval), DimensionError);
  EXPECT_THROW(detail(input_d({1, 3, 32, 20}), Mode::kEval), DimensionError);
}

TEST(StemBlock, QuartersResolution) {
  for (Index c : {16, 24}) {
    ParameterStore<float> store;
    StemBlock<float> stem(scope_of(store), c);
    EXPECT_EQ(stem(input_f({1, 3, 512, 512}), Mode::kEval).shape(), (Shape{1, c, 128, 128}));
  }
  ParameterStore<double> store;
  StemBlock<double> stem(scope_of(store), 4);
  EXPECT_EQ(stem(input_d({2, 3, 64, 64}), Mode::kTrain).shape(), (Shape{2, 4, 16, 16}));
  EXPECT_THROW(stem(input_d({1, 3, 66, 64}), Mode::kEval), DimensionError);
}

TEST(UIBBlock, StrideOneEqualWidthPreservesShape) {
  ParameterStore<double> store;
  UIBBlock<double> block(scope_of(store), uib(8, 8, 1));
  VD x = input_d({2, 8, 8, 8});
  EXPECT_EQ(block(x, Mode::kTrain).shape(), x.shape());
  EXPECT_TRUE(block.spec().residual());
}

TEST(UIBBlock, ZeroLayerScaleWithResidualIsExactIdentity) {
  for (const auto& k : KernelConfig::ablation_grid()) {
    ParameterStore<double> store;
    UIBBlock<double> block(scope_of(store), uib(8, 8, 1, k, true, 0.0));
    VD x = input_d({2, 8, 6, 6});
    EXPECT_EQ(max_abs_diff(block(x, Mode::kTrain).value(), x.value()), 0.0) << k.str();
  }
}

TEST(UIBBlock, ResidualLaw) {
  EXPECT_TRUE(uib(8, 8, 1).residual());
  EXPECT_FALSE(uib(8, 8, 2).residual());
  EXPECT_FALSE(uib(8, 16, 1).residual());
  // Without a residual, a zero LayerScale zeroes the output.
  ParameterStore<double> store;
  UIBBlock<double> block(scope_of(store), uib(8, 16, 1, {}, true, 0.0));
  EXPECT_EQ(block(input_d({2, 8, 4, 4}), Mode::kTrain).value().vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(UIBBlock, StrideTwoWithoutMidKernelRejected) {
  ParameterStore<double> store;
  EXPECT_THROW(UIBBlock<double>(scope_of(store), uib(8, 16, 2, {3, 0, 3})), ConfigError);
  EXPECT_NO_THROW(UIBBlock<double>(scope_of(store, "ok"), uib(8, 8, 1, {3, 0, 3})));
}

TEST(UIBBlock, KernelZeroSkipsDepthwiseParameters) {
  ParameterStore<double> store;
  UIBBlock<double> block(scope_of(store, "b"), uib(8, 8, 1, {0, 3, 0}));
  for (const auto& p : store.all()) {
    EXPECT_EQ(p->name.find("dw_start"), std::string::npos) << p->name;
    EXPECT_EQ(p->name.find("dw_end"), std::string::npos) << p->name;
  }
  ParameterStore<double> full;
  UIBBlock<double> block5(scope_of(full, "b"), uib(8, 8, 1, {5, 3, 5}));
  EXPECT_NE(full.find("b.dw_start.conv.weight"), nullptr);
  EXPECT_NE(full.find("b.dw_end.conv.weight"), nullptr);
}

TEST(UIBBlock, LargerOuterKernelsAddParameters) {
  const Index base = UIBBlock<double>::cost(uib(32, 32, 1, {0, 3, 0}), 8, 8).params;
  const Index wide = UIBBlock<double>::cost(uib(32, 32, 1, {5, 3, 5}), 8, 8).params;
  EXPECT_EQ(wide - base, 2 * (32 * 25 + 2 * 32));
}

TEST(UIBBlock, SeToggleChangesParamsNotShape) {
  ParameterStore<double> with_se, without_se;
  UIBBlock<double> a(scope_of(with_se), uib(8, 16, 2, {}, true));
  UIBBlock<double> b(scope_of(without_se), uib(8, 16, 2, {}, false));
  VD x = input_d({2, 8, 8, 8});
  EXPECT_EQ(a(x, Mode::kTrain).shape(), b(x, Mode::kTrain).shape());
  EXPECT_EQ(a(x, Mode::kTrain).shape(), (Shape{2, 16, 4, 4}));
  EXPECT_EQ(with_se.trainable_count() - without_se.trainable_count(), 2 * 48 * 12);
}

TEST(SemanticBranch, MediumStageShapesAt512) {
  ParameterStore<float> store;
  SemanticBranch<float> branch(scope_of(store), kMedium, {}, true, 1e-5);
  auto f = branch(input_f({1, 3, 512, 512}), Mode::kEval);
  EXPECT_EQ(f.stem.shape(), (Shape{1, 16, 128, 128}));
  EXPECT_EQ(f.s3.shape(), (Shape{1, 32, 64, 64}));
  EXPECT_EQ(f.s4.shape(), (Shape{1, 64, 32, 32}));
  EXPECT_EQ(f.s5.shape(), (Shape{1, 128, 16, 16}));
  EXPECT_EQ(f.context.shape(), (Shape{1, 128, 16, 16}));
}

TEST(SemanticBranch, BlockCountsAndStrides) {
  auto medium = SemanticBranch<float>::block_specs(kMedium, {}, true, 1e-5);
  EXPECT_EQ(medium.size(), 8u);
  auto small = SemanticBranch<float>::block_specs(kSmall, {}, true, 1e-5);
  ASSERT_EQ(small.size(), 4u);
  EXPECT_EQ(small[0].stride, 2);
  EXPECT_EQ(small[1].stride, 2);
  EXPECT_EQ(small[2].stride, 2);
  EXPECT_EQ(small[3].stride, 1);
  EXPECT_TRUE(small[3].residual());
}

TEST(SemanticBranch, RejectsSizesNotDivisibleBy32) {
  ParameterStore<double> store;
  SemanticBranch<double> branch(scope_of(store), kTiny, {}, true, 1e-5);
  EXPECT_THROW(branch(input_d({1, 3, 48, 64}), Mode::kEval), DimensionError);
  auto f = branch(input_d({2, 3, 64, 96}), Mode::kTrain);
  EXPECT_EQ(f.s5.shape(), (Shape{2, 16, 2, 3}));
}

TEST(ContextEmbedding, ConstantInputGivesSpatiallyConstantInterior) {
  ParameterStore<double> store;
  ContextEmbedding<double> ctx(scope_of(store), 8);
  // Zero padding of the 3x3 fuse breaks constancy at the border only.
  VD y = ctx(VD::constant(TensorD::full({2, 8, 6, 6}, 0.7)), Mode::kEval);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 6, 6}));
  const TensorD& t = y.value();
  for (Index c = 0; c < 8; ++c)
    for (Index h = 1; h < 5; ++h)
      for (Index w = 1; w < 5; ++w) EXPECT_NEAR(t.at(1, c, h, w), t.at(1, c, 1, 1), 1e-12);
}

TEST(ContextEmbedding, MatchesCompositionOracle) {
  ParameterStore<double> store;
  ContextEmbedding<double> ctx(scope_of(store, "ctx"), 4);
  VD x = input_d({2, 4, 5, 5});
  VD y = ctx(x, Mode::kEval);

  auto p = [&](const std::string& n) { return param_var(store.at("ctx." + n)); };
  auto bn_eval = [&](const VD& v, const std::string& n) {
    BatchNormState<double> st{&store.at("ctx." + n + ".running_mean").value, &store.at("ctx." + n + ".running_var").value};
    return batch_norm2d(v, p(n + ".gamma"), p(n + ".beta"), st, Mode::kEval);
  };
  VD g = bn_eval(adaptive_avg_pool(x, 1, 1), "bn");
  g = relu(bn_eval(conv2d(g, p("gap_conv.conv.weight"), VD(), {1, 0, 1}), "gap_conv.bn"));
  VD oracle = relu(bn_eval(conv2d(add_spatial_broadcast(x, g), p("fuse.conv.weight"), VD(), {1, 1, 1}), "fuse.bn"));
  EXPECT_LT(max_abs_diff(y.value(), oracle.value()), 1e-12);
}

TEST(Aggregation, MediumShapeAt512Resolution) {
  ParameterStore<float> store;
  Aggregation<float> agg(scope_of(store), 128, 128, 128);
  VF y = agg(input_f({1, 128, 64, 64}), input_f({1, 128, 16, 16}, 5), Mode::kEval);
  EXPECT_EQ(y.shape(), (Shape{1, 128, 64, 64}));
}

TEST(Aggregation, ZeroSemanticIsFiniteAndRatioChecked) {
  ParameterStore<double> store;
  Aggregation<double> agg(scope_of(store), 8, 16, 8);
  VD y = agg(input_d({2, 8, 8, 8}), VD::constant(TensorD::zeros({2, 16, 2, 2})), Mode::kTrain);
  EXPECT_TRUE(y.value().all_finite());
  EXPECT_THROW(agg(input_d({2, 8, 8, 8}), input_d({2, 16, 4, 4}), Mode::kTrain), DimensionError);
  EXPECT_THROW(agg(input_d({2, 8, 8, 8}), input_d({2, 16, 2, 3}), Mode::kTrain), DimensionError);
  EXPECT_ANY_THROW(agg(input_d({2, 8, 8, 8}), input_d({2, 12, 2, 2}), Mode::kTrain));
}

TEST(Aggregation, GradientReachesBothBranches) {
  ParameterStore<double> store;
  Aggregation<double> agg(scope_of(store), 8, 16, 8);
  Tape<double> tape;
  VD d = tape.variable(uniform_tensor<double>({2, 8, 8, 8}, 1.0, 1));
  VD s = tape.variable(uniform_tensor<double>({2, 16, 2, 2}, 1.0, 2));
  VD y = agg(d, s, Mode::kTrain);
  VD loss = masked_sum(y, uniform_tensor<double>(y.shape(), 1.0, 3));
  tape.backward(loss);
  EXPECT_GT(d.grad().vec().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(s.grad().vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(AuxHead, ShuffleRestoresInputResolution) {
  ParameterStore<float> store;
  AuxHead<float> stem_head(scope_of(store, "a4"), 16, 4, 17);
  EXPECT_EQ(stem_head(input_f({1, 16, 128, 128}), Mode::kEval).shape(), (Shape{1, 17, 512, 512}));
  AuxHead<float> s5_head(scope_of(store, "a32"), 128, 32, 17);
  EXPECT_EQ(s5_head(input_f({1, 128, 16, 16}), Mode::kEval).shape(), (Shape{1, 17, 512, 512}));
  EXPECT_EQ(s5_head.factor(), 32);
}

TEST(EncoderCost, AnalyticParamsAndMacsMatchBuiltModules) {
  const Index h = 64, w = 96;
  for (const auto& k : KernelConfig::ablation_grid()) {
    for (bool se : {true, false}) {
      ParameterStore<double> store;
      SemanticBranch<double> branch(scope_of(store), kTiny, k, se, 1e-5);
      const auto costs = SemanticBranch<double>::cost(kTiny, k, se, h, w);
      const Cost total = costs[0] + costs[1] + costs[2];
      EXPECT_EQ(store.trainable_count(), total.params) << k.str() << " se=" << se;
      MacCounter counter;
      branch(input_d({1, 3, h, w}), Mode::kEval);
      EXPECT_EQ(counter.macs(), total.macs) << k.str() << " se=" << se;
    }
  }
  {
    ParameterStore<double> store;
    DetailBranch<double> detail(scope_of(store), kTiny.detail_channels);
    const Cost c = DetailBranch<double>::cost(kTiny.detail_channels, h, w);
    EXPECT_EQ(store.trainable_count(), c.params);
    MacCounter counter;
    detail(input_d({1, 3, h, w}), Mode::kEval);
    EXPECT_EQ(counter.macs(), c.macs);
  }
  {
    ParameterStore<double> store;
    Aggregation<double> agg(scope_of(store), 16, 16, 12);
    const Cost c = Aggregation<double>::cost(16, 16, 12, h, w);
    EXPECT_EQ(store.trainable_count(), c.params);
    MacCounter counter;
    agg(input_d({1, 16, h / 8, w / 8}), input_d({1, 16, h / 32, w / 32}), Mode::kEval);
    EXPECT_EQ(counter.macs(), c.macs);
  }
  {
    ParameterStore<double> store;
    AuxHead<double> aux(scope_of(store), 8, 8, 17);
    const Cost c = AuxHead<double>::cost(8, 8, 17, h / 8, w / 8);
    EXPECT_EQ(store.trainable_count(), c.params);
    MacCounter counter;
    aux(input_d({1, 8, h / 8, w / 8}), Mode::kEval);
    EXPECT_EQ(counter.macs(), c.macs);
  }
}

TEST(EncoderInit, SameSeedSameWeightsDifferentSeedDifferent) {
  ParameterStore<double> a, b, c;
  SemanticBranch<double>(scope_of(a, "e", 9), kTiny, {}, true, 1e-5);
  SemanticBranch<double>(scope_of(b, "e", 9), kTiny, {}, true, 1e-5);
  SemanticBranch<double>(scope_of(c, "e", 10), kTiny, {}, true, 1e-5);
  ASSERT_EQ(a.all().size(), b.all().size());
  double diff_c = 0;
  for (std::size_t i = 0; i < a.all().size(); ++i) {
    EXPECT_EQ(max_abs_diff(a.all()[i]->value, b.all()[i]->value), 0.0);
    diff_c = std::max(diff_c, max_abs_diff(a.all()[i]->value, c.all()[i]->value));
  }
  EXPECT_GT(diff_c, 0.0);
}
