#include <gtest/gtest.h>

#include <numeric>

#include "weedsense/core/init.hpp"
#include "weedsense/core/random.hpp"
#include "weedsense/decoder/decoder.hpp"

using namespace weedsense;

namespace {

using VD = Var<double>;
using VF = Var<float>;

template <typename Scalar>
LayerScope<Scalar> scope_of(ParameterStore<Scalar>& store, const std::string& prefix = "d") {
  return {&store, 5, prefix};
}

VD input_d(Shape s, std::uint64_t seed = 21) { return VD::constant(uniform_tensor<double>(std::move(s), 1.0, seed)); }

double max_abs_diff(const TensorD& a, const TensorD& b) { return (a.vec() - b.vec()).cwiseAbs().maxCoeff(); }

TGDSpec tiny_tgd() {
  TGDSpec s;
  s.pooled_dim = 8;
  s.embed_dim = 16;
  s.heads = 4;
  s.ffn_dim = 32;
  s.head_hidden = {24, 12};
  return s;
}

// Shuffles the spatial positions of every [n, :, :, :] slab with one permutation.
TensorD permute_pixels(const TensorD& x, std::uint64_t seed) {
  const Index hw = x.dim(2) * x.dim(3);
  std::vector<Index> perm(static_cast<std::size_t>(hw));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  rng.shuffle(perm.begin(), perm.end());
  TensorD y(x.shape());
  for (Index n = 0; n < x.dim(0); ++n)
    for (Index c = 0; c < x.dim(1); ++c)
      for (Index p = 0; p < hw; ++p) {
        const Index q = perm[static_cast<std::size_t>(p)];
        y.at(n, c, p / x.dim(3), p % x.dim(3)) = x.at(n, c, q / x.dim(3), q % x.dim(3));
      }
  return y;
}

}  // namespace

TEST(SegHead, MediumShapeAt512) {
  ParameterStore<float> store;
  SegHead<float> head(scope_of(store), SegHeadSpec{});
  VF x = VF::constant(uniform_tensor<float>({1, 128, 64, 64}, 1.0, 2));
  EXPECT_EQ(head(x, Mode::kEval).shape(), (Shape{1, 17, 512, 512}));
  EXPECT_EQ(SegHeadSpec{}.pre_shuffle_channels(), 1088);
  EXPECT_EQ(store.at("d.classifier.weight").value.dim(0), 1088);
}

TEST(SegHead, EvalIsDeterministicTrainDropoutVariesWithSeed) {
  SegHeadSpec spec{8, 8, 0.5, 3, 2};
  ParameterStore<double> store;
  SegHead<double> head(scope_of(store), spec);
  VD x = input_d({2, 8, 4, 4});
  EXPECT_EQ(max_abs_diff(head(x, Mode::kEval, 1).value(), head(x, Mode::kEval, 2).value()), 0.0);
  // Train-mode batch norm is deterministic, so any difference comes from the mask.
  EXPECT_GT(max_abs_diff(head(x, Mode::kTrain, 1).value(), head(x, Mode::kTrain, 2).value()), 0.0);
  EXPECT_EQ(max_abs_diff(head(x, Mode::kTrain, 7).value(), head(x, Mode::kTrain, 7).value()), 0.0);
}

TEST(SegHead, ChannelMismatchAndBadSpecRejected) {
  ParameterStore<double> store;
  SegHead<double> head(scope_of(store), SegHeadSpec{8, 8, 0.1, 3, 2});
  EXPECT_THROW(head(input_d({1, 6, 4, 4}), Mode::kEval), DimensionError);
  EXPECT_THROW(SegHead<double>(scope_of(store, "x"), SegHeadSpec{8, 8, 0.1, 1, 2}), ConfigError);
  EXPECT_THROW(SegHead<double>(scope_of(store, "y"), SegHeadSpec{8, 8, 1.0, 3, 2}), ConfigError);
}

TEST(SegHead, NotInvariantToPixelPermutation) {
  ParameterStore<double> store;
  SegHead<double> head(scope_of(store), SegHeadSpec{8, 8, 0.1, 3, 2});
  VD x = input_d({1, 8, 4, 4});
  VD xp = VD::constant(permute_pixels(x.value(), 4));
  EXPECT_GT(max_abs_diff(head(x, Mode::kEval).value(), head(xp, Mode::kEval).value()), 1e-6);
}

TEST(TemporalGrowthDecoder, MediumOutputShape) {
  ParameterStore<float> store;
  TemporalGrowthDecoder<float> tgd(scope_of(store), TGDSpec{});
  VF x = VF::constant(uniform_tensor<float>({2, 128, 8, 8}, 1.0, 3));
  EXPECT_EQ(tgd(x).shape(), (Shape{2, 512}));
}

TEST(TemporalGrowthDecoder, InvariantToPixelPermutation) {
  ParameterStore<double> store;
  TemporalGrowthDecoder<double> tgd(scope_of(store), tiny_tgd());
  TaskHeads<double> heads(scope_of(store, "h"), tiny_tgd(), true, true);
  VD x = input_d({2, 8, 5, 5});
  VD xp = VD::constant(permute_pixels(x.value(), 9));
  auto a = heads(tgd(x));
  auto b = heads(tgd(xp));
  EXPECT_LT(max_abs_diff(a.height.value(), b.height.value()), 1e-12);
  EXPECT_LT(max_abs_diff(a.week.value(), b.week.value()), 1e-12);
}

TEST(TemporalGrowthDecoder, SingleTokenAttentionIsValuePath) {
  ParameterStore<double> store;
  const TGDSpec spec = tiny_tgd();
  TemporalGrowthDecoder<double> tgd(scope_of(store), spec);
  VD x = input_d({3, 8, 4, 4});
  VD y = tgd(x);

  auto p = [&](const std::string& n) { return param_var(store.at("d." + n)); };
  VD pooled = reshape(adaptive_avg_pool(x, 1, 1), {3, 8});
  VD t = linear(pooled, p("proj.weight"), p("proj.bias"));
  // One key: softmax weight 1, so attention reduces to Wo(Wv t).
  VD attn = linear(linear(t, p("attn.wv"), VD()), p("attn.wo"), VD());
  VD u = layer_norm(add(t, attn), p("attn_norm.gamma"), p("attn_norm.beta"));
  VD f = linear(gelu(linear(u, p("ffn.in.weight"), p("ffn.in.bias"))), p("ffn.out.weight"), p("ffn.out.bias"));
  VD oracle = layer_norm(add(u, f), p("ffn_norm.gamma"), p("ffn_norm.beta"));
  EXPECT_LT(max_abs_diff(y.value(), oracle.value()), 1e-12);
}

TEST(TemporalGrowthDecoder, RejectsIndivisibleHeadsAndWrongChannels) {
  ParameterStore<double> store;
  TGDSpec bad = tiny_tgd();
  bad.heads = 3;
  EXPECT_THROW(TemporalGrowthDecoder<double>(scope_of(store), bad), ConfigError);
  TemporalGrowthDecoder<double> tgd(scope_of(store, "ok"), tiny_tgd());
  EXPECT_THROW(tgd(input_d({1, 6, 4, 4})), DimensionError);
}

TEST(TaskHeads, MediumAndSmallShapes) {
  for (std::array<Index, 2> hidden : {std::array<Index, 2>{1024, 512}, std::array<Index, 2>{512, 256}}) {
    TGDSpec spec;
    spec.head_hidden = hidden;
    ParameterStore<float> store;
    TaskHeads<float> heads(scope_of(store), spec, true, true);
    auto out = heads(VF::constant(uniform_tensor<float>({3, 512}, 1.0, 4)));
    EXPECT_EQ(out.height.shape(), (Shape{3, 1}));
    EXPECT_EQ(out.week.shape(), (Shape{3, 11}));
    EXPECT_EQ(store.at("d.trunk.out.weight").value.dim(0), hidden[1]);
  }
}

TEST(TaskHeads, ZeroTrunkPassesBiasesThrough) {
  ParameterStore<double> store;
  const TGDSpec spec = tiny_tgd();
  TaskHeads<double> heads(scope_of(store), spec, true, true);
  // Zero trunk output: LayerNorm with beta = -1 and gamma = 0 drives ReLU to zero.
  store.at("d.trunk.norm.gamma").value = TensorD::zeros({12});
  store.at("d.trunk.norm.beta").value = TensorD::full({12}, -1.0);
  store.at("d.height.bias").value = TensorD({1}, {3.5});
  store.at("d.week.bias").value = uniform_tensor<double>({11}, 1.0, 8);
  auto out = heads(input_d({2, 16}));
  for (Index n = 0; n < 2; ++n) {
    EXPECT_EQ(out.height.value()[n], 3.5);
    for (Index k = 0; k < 11; ++k) EXPECT_EQ(out.week.value()[n * 11 + k], store.at("d.week.bias").value[k]);
  }
}

TEST(TaskHeads, OptionalHeads) {
  ParameterStore<double> store;
  TaskHeads<double> height_only(scope_of(store, "a"), tiny_tgd(), true, false);
  auto out = height_only(input_d({2, 16}));
  EXPECT_TRUE(out.height.defined());
  EXPECT_FALSE(out.week.defined());
  EXPECT_EQ(store.find("a.week.weight"), nullptr);
  EXPECT_THROW(TaskHeads<double>(scope_of(store, "b"), tiny_tgd(), false, false), ConfigError);
}

TEST(DecoderCost, AnalyticMatchesBuilt) {
  {
    const SegHeadSpec spec{16, 12, 0.1, 17, 8};
    ParameterStore<double> store;
    SegHead<double> head(scope_of(store), spec);
    const Cost c = SegHead<double>::cost(spec, 4, 6);
    EXPECT_EQ(store.trainable_count(), c.params);
    MacCounter counter;
    head(input_d({1, 16, 4, 6}), Mode::kEval);
    EXPECT_EQ(counter.macs(), c.macs);
  }
  {
    ParameterStore<double> store;
    TemporalGrowthDecoder<double> tgd(scope_of(store), tiny_tgd());
    TaskHeads<double> heads(scope_of(store, "h"), tiny_tgd(), true, true);
    const Cost c = TemporalGrowthDecoder<double>::cost(tiny_tgd()) + TaskHeads<double>::cost(tiny_tgd(), true, true);
    EXPECT_EQ(store.trainable_count(), c.params);
    MacCounter counter;
    heads(tgd(input_d({1, 8, 4, 4})));
    EXPECT_EQ(counter.macs(), c.macs);
  }
  // Medium widths by hand: projection, four attention matrices, FFN, two norms, trunk, heads.
  const Cost medium = TemporalGrowthDecoder<double>::cost(TGDSpec{}) + TaskHeads<double>::cost(TGDSpec{}, true, true);
  const Index expected = (128 * 512 + 512) + 4 * 512 * 512 + (512 * 2048 + 2048) + (2048 * 512 + 512) + 2 * 1024 +
                         (512 * 1024 + 1024) + (1024 * 512 + 512) + 1024 + (512 + 1) + (512 * 11 + 11);
  EXPECT_EQ(medium.params, expected);
}
