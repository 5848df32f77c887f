#include "weedsense/encoder/encoder.hpp"

#include "weedsense/core/init.hpp"

#include <regex>

namespace weedsense {
namespace {

void require_divisible(const Shape& s, Index factor, const char* where) {
  if (s.rank() != 4) throw DimensionError(std::string(where) + ": input must be [N,C,H,W], got " + s.str());
  if (s[2] % factor != 0) {
    throw DimensionError(std::string(where) + ": height axis (2) extent " + std::to_string(s[2]) +
                         " not divisible by " + std::to_string(factor));
  }
  if (s[3] % factor != 0) {
    throw DimensionError(std::string(where) + ": width axis (3) extent " + std::to_string(s[3]) +
                         " not divisible by " + std::to_string(factor));
  }
}

void require_channels(const Shape& s, Index c, const char* where) {
  if (s.rank() != 4 || s[1] != c) {
    throw DimensionError(std::string(where) + ": expected " + std::to_string(c) + " channels on axis 1, got " +
                         s.str());
  }
}

constexpr std::array<int, 3> kDetailDepth{2, 3, 3};

}  // namespace

// KernelConfig ----------------------------------------------------------------

std::string KernelConfig::str() const {
  return "s" + std::to_string(start) + "m" + std::to_string(mid) + "e" + std::to_string(end);
}

KernelConfig KernelConfig::parse(const std::string& text) {
  static const std::regex re(R"(^[sS](\d)-?[mM](\d)-?[eE](\d)$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw ConfigError("kernel config '" + text + "' is not of the form s<k>m<k>e<k>");
  }
  KernelConfig k{std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])};
  UIBSpec probe;
  probe.kernel_start = k.start;
  probe.kernel_mid = k.mid;
  probe.kernel_end = k.end;
  probe.in_channels = probe.out_channels = 4;
  probe.validate("kernel config '" + text + "'");
  return k;
}

const std::vector<KernelConfig>& KernelConfig::ablation_grid() {
  static const std::vector<KernelConfig> grid{{0, 3, 0}, {1, 3, 0}, {0, 3, 1}, {1, 3, 1},
                                              {5, 3, 0}, {0, 3, 5}, {5, 3, 5}};
  return grid;
}

void UIBSpec::validate(const std::string& where) const {
  auto ok_outer = [](int k) { return k == 0 || k == 1 || k == 3 || k == 5; };
  if (!ok_outer(kernel_start)) throw ConfigError(where + ": start kernel must be 0, 1, 3 or 5");
  if (!ok_outer(kernel_end)) throw ConfigError(where + ": end kernel must be 0, 1, 3 or 5");
  if (kernel_mid != 0 && kernel_mid != 3) throw ConfigError(where + ": mid kernel must be 0 or 3");
  if (stride != 1 && stride != 2) throw ConfigError(where + ": stride must be 1 or 2");
  if (stride == 2 && kernel_mid == 0) {
    throw ConfigError(where + ": stride-2 block has no mid depthwise convolution to carry the stride");
  }
  if (expansion_ratio < 1) throw ConfigError(where + ": expansion ratio must be positive");
  if (in_channels < 1 || out_channels < 1) throw ConfigError(where + ": channel counts must be positive");
  if (use_se && expanded_channels() % 4 != 0) {
    throw ConfigError(where + ": SE needs expanded channels divisible by 4, got " +
                      std::to_string(expanded_channels()));
  }
}

// DetailBranch ----------------------------------------------------------------

template <typename Scalar>
DetailBranch<Scalar>::DetailBranch(const LayerScope<Scalar>& scope, const std::array<Index, 3>& channels) {
  Index cin = 3;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < kDetailDepth[static_cast<std::size_t>(s)]; ++i) {
      const std::string name = "s" + std::to_string(s + 1) + "." + std::to_string(i);
      layers_.emplace_back(scope.child(name), cin, channels[static_cast<std::size_t>(s)], 3, i == 0 ? 2 : 1);
      cin = channels[static_cast<std::size_t>(s)];
    }
  }
}

template <typename Scalar>
Var<Scalar> DetailBranch<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  require_divisible(x.shape(), 8, "detail branch");
  Var<Scalar> y = x;
  for (const auto& layer : layers_) y = layer(y, mode);
  return y;
}

template <typename Scalar>
Cost DetailBranch<Scalar>::cost(const std::array<Index, 3>& channels, Index h, Index w) {
  Cost c;
  Index cin = 3;
  for (int s = 0; s < 3; ++s) {
    h /= 2;
    w /= 2;
    for (int i = 0; i < kDetailDepth[static_cast<std::size_t>(s)]; ++i) {
      c += conv_bn_cost(cin, channels[static_cast<std::size_t>(s)], 3, h, w);
      cin = channels[static_cast<std::size_t>(s)];
    }
  }
  return c;
}

// StemBlock -------------------------------------------------------------------

template <typename Scalar>
StemBlock<Scalar>::StemBlock(const LayerScope<Scalar>& scope, Index channels)
    : conv_(scope.child("conv"), 3, channels, 3, 2),
      reduce_(scope.child("left.reduce"), channels, channels / 2, 1),
      down_(scope.child("left.down"), channels / 2, channels, 3, 2),
      fuse_(scope.child("fuse"), 2 * channels, channels, 3) {
  if (channels < 2) throw ConfigError(scope.prefix + ": stem needs at least 2 channels");
}

template <typename Scalar>
Var<Scalar> StemBlock<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  require_divisible(x.shape(), 4, "stem");
  Var<Scalar> f = conv_(x, mode);
  Var<Scalar> left = down_(reduce_(f, mode), mode);
  Var<Scalar> right = max_pool2d(f, 3, 2, 1);
  return fuse_(concat_channels(left, right), mode);
}

template <typename Scalar>
Cost StemBlock<Scalar>::cost(Index channels, Index h, Index w) {
  const Index h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;
  return conv_bn_cost(3, channels, 3, h2, w2) + conv_bn_cost(channels, channels / 2, 1, h2, w2) +
         conv_bn_cost(channels / 2, channels, 3, h4, w4) + conv_bn_cost(2 * channels, channels, 3, h4, w4);
}

// UIBBlock --------------------------------------------------------------------

template <typename Scalar>
UIBBlock<Scalar>::UIBBlock(const LayerScope<Scalar>& scope, const UIBSpec& spec) : spec_(spec) {
  spec.validate(scope.prefix);
  const Index cin = spec.in_channels, e = spec.expanded_channels(), cout = spec.out_channels;
  if (spec.kernel_start > 0) dw_start_ = ConvBN<Scalar>(scope.child("dw_start"), cin, cin, spec.kernel_start, 1, int(cin), false);
  expand_ = ConvBN<Scalar>(scope.child("expand"), cin, e, 1);
  if (spec.kernel_mid > 0) {
    dw_mid_ = ConvBN<Scalar>(scope.child("dw_mid"), e, e, spec.kernel_mid, spec.stride, int(e));
  }
  if (spec.use_se) {
    ParameterStore<Scalar>& s = *scope.store;
    const std::string r = scope.path("se.reduce.weight"), x = scope.path("se.expand.weight");
    se_reduce_ = &s.add(r, kaiming_uniform<Scalar>({e / 4, e}, e, derive_seed(scope.seed, r)));
    se_expand_ = &s.add(x, kaiming_uniform<Scalar>({e, e / 4}, e / 4, derive_seed(scope.seed, x)));
  }
  project_ = ConvBN<Scalar>(scope.child("project"), e, cout, 1, 1, 1, false);
  if (spec.kernel_end > 0) dw_end_ = ConvBN<Scalar>(scope.child("dw_end"), cout, cout, spec.kernel_end, 1, int(cout), false);
  layer_scale_ = &scope.store->add(scope.path("layer_scale"),
                                   Tensor<Scalar>::full({cout}, static_cast<Scalar>(spec.layer_scale_init)));
}

template <typename Scalar>
Var<Scalar> UIBBlock<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  require_channels(x.shape(), spec_.in_channels, "uib block");
  Var<Scalar> y = x;
  if (spec_.kernel_start > 0) y = dw_start_(y, mode);
  y = expand_(y, mode);
  if (spec_.kernel_mid > 0) y = dw_mid_(y, mode);
  if (spec_.use_se) y = se_block(y, param_var(*se_reduce_), param_var(*se_expand_));
  y = project_(y, mode);
  if (spec_.kernel_end > 0) y = dw_end_(y, mode);
  y = channel_scale(y, param_var(*layer_scale_));
  return spec_.residual() ? add(y, x) : y;
}

template <typename Scalar>
Cost UIBBlock<Scalar>::cost(const UIBSpec& spec, Index h, Index w) {
  const Index cin = spec.in_channels, e = spec.expanded_channels(), cout = spec.out_channels;
  const Index ho = h / spec.stride, wo = w / spec.stride;
  Cost c;
  if (spec.kernel_start > 0) c += conv_bn_cost(cin, cin, spec.kernel_start, h, w, int(cin));
  c += conv_bn_cost(cin, e, 1, h, w);
  if (spec.kernel_mid > 0) c += conv_bn_cost(e, e, spec.kernel_mid, ho, wo, int(e));
  if (spec.use_se) c += linear_cost(e, e / 4, false) + linear_cost(e / 4, e, false);
  c += conv_bn_cost(e, cout, 1, ho, wo);
  if (spec.kernel_end > 0) c += conv_bn_cost(cout, cout, spec.kernel_end, ho, wo, int(cout));
  c.params += cout;  // LayerScale
  return c;
}

// ContextEmbedding -------------------------------------------------------------

template <typename Scalar>
ContextEmbedding<Scalar>::ContextEmbedding(const LayerScope<Scalar>& scope, Index channels)
    : bn_(scope.child("bn"), channels),
      gap_conv_(scope.child("gap_conv"), channels, channels, 1),
      fuse_(scope.child("fuse"), channels, channels, 3) {}

template <typename Scalar>
Var<Scalar> ContextEmbedding<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  Var<Scalar> g = gap_conv_(bn_(adaptive_avg_pool(x, 1, 1), mode), mode);
  return fuse_(add_spatial_broadcast(x, g), mode);
}

template <typename Scalar>
Cost ContextEmbedding<Scalar>::cost(Index channels, Index h, Index w) {
  return bn_cost(channels) + conv_bn_cost(channels, channels, 1, 1, 1) + conv_bn_cost(channels, channels, 3, h, w);
}

// SemanticBranch --------------------------------------------------------------

template <typename Scalar>
std::vector<UIBSpec> SemanticBranch<Scalar>::block_specs(const BranchSpec& spec, const KernelConfig& kernel,
                                                         bool use_se, double layer_scale_init) {
  std::vector<UIBSpec> out;
  Index cin = spec.semantic_channels[0];
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < spec.uib_blocks_per_stage[static_cast<std::size_t>(s)]; ++i) {
      UIBSpec u;
      u.kernel_start = kernel.start;
      u.kernel_mid = kernel.mid;
      u.kernel_end = kernel.end;
      u.expansion_ratio = spec.expansion_ratio;
      u.use_se = use_se;
      u.stride = i == 0 ? 2 : 1;
      u.in_channels = cin;
      u.out_channels = spec.semantic_channels[static_cast<std::size_t>(s + 1)];
      u.layer_scale_init = layer_scale_init;
      cin = u.out_channels;
      out.push_back(u);
    }
  }
  return out;
}

template <typename Scalar>
SemanticBranch<Scalar>::SemanticBranch(const LayerScope<Scalar>& scope, const BranchSpec& spec,
                                       const KernelConfig& kernel, bool use_se, double layer_scale_init)
    : stem_(scope.child("stem"), spec.semantic_channels[0]) {
  static const char* kStageNames[3] = {"s3", "s4", "s5"};
  const auto specs = block_specs(spec, kernel, use_se, layer_scale_init);
  std::size_t k = 0;
  for (int s = 0; s < 3; ++s) {
    if (spec.uib_blocks_per_stage[static_cast<std::size_t>(s)] < 1) {
      throw ConfigError(scope.prefix + ": stage " + kStageNames[s] + " needs at least one UIB block");
    }
    for (int i = 0; i < spec.uib_blocks_per_stage[static_cast<std::size_t>(s)]; ++i, ++k) {
      const std::string name = std::string(kStageNames[s]) + "." + std::to_string(i);
      stages_[static_cast<std::size_t>(s)].emplace_back(scope.child(name), specs[k]);
    }
  }
  context_ = ContextEmbedding<Scalar>(scope.child("context"), spec.semantic_channels[3]);
}

template <typename Scalar>
SemanticFeatures<Scalar> SemanticBranch<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  require_divisible(x.shape(), 32, "semantic branch");
  SemanticFeatures<Scalar> f;
  f.stem = stem_(x, mode);
  std::array<Var<Scalar>*, 3> outs{&f.s3, &f.s4, &f.s5};
  Var<Scalar> y = f.stem;
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& block : stages_[s]) y = block(y, mode);
    *outs[s] = y;
  }
  f.context = context_(f.s5, mode);
  return f;
}

template <typename Scalar>
std::array<Cost, 3> SemanticBranch<Scalar>::cost(const BranchSpec& spec, const KernelConfig& kernel, bool use_se,
                                                 Index h, Index w) {
  std::array<Cost, 3> c{StemBlock<Scalar>::cost(spec.semantic_channels[0], h, w), Cost{}, Cost{}};
  Index fh = h / 4, fw = w / 4;
  for (const UIBSpec& u : block_specs(spec, kernel, use_se, 1e-5)) {
    c[1] += UIBBlock<Scalar>::cost(u, fh, fw);
    fh /= u.stride;
    fw /= u.stride;
  }
  c[2] = ContextEmbedding<Scalar>::cost(spec.semantic_channels[3], fh, fw);
  return c;
}

// Aggregation -----------------------------------------------------------------

template <typename Scalar>
Aggregation<Scalar>::Aggregation(const LayerScope<Scalar>& scope, Index detail_channels, Index semantic_channels,
                                 Index channels)
    : left1_dw_(scope.child("left1.dw"), detail_channels, detail_channels, 3, 1, int(detail_channels), false),
      left2_conv_(scope.child("left2.conv"), detail_channels, channels, 3, 2, 1, false),
      right1_conv_(scope.child("right1.conv"), semantic_channels, channels, 3, 1, 1, false),
      right2_dw_(scope.child("right2.dw"), semantic_channels, semantic_channels, 3, 1, int(semantic_channels), false),
      fuse_(scope.child("fuse"), channels, channels, 3),
      left1_pw_(scope.child("left1.pw"), detail_channels, channels, 1),
      right2_pw_(scope.child("right2.pw"), semantic_channels, channels, 1) {}

template <typename Scalar>
Var<Scalar> Aggregation<Scalar>::operator()(const Var<Scalar>& detail, const Var<Scalar>& semantic,
                                            Mode mode) const {
  const Shape& d = detail.shape();
  const Shape& s = semantic.shape();
  if (d.rank() != 4 || s.rank() != 4 || d[0] != s[0]) {
    throw DimensionError("aggregation: inputs must be NCHW with equal batch, got " + d.str() + " and " + s.str());
  }
  if (d[2] != 4 * s[2]) {
    throw DimensionError("aggregation: height axis (2) ratio must be 4, got " + d.str() + " vs " + s.str());
  }
  if (d[3] != 4 * s[3]) {
    throw DimensionError("aggregation: width axis (3) ratio must be 4, got " + d.str() + " vs " + s.str());
  }
  Var<Scalar> left1 = left1_pw_(left1_dw_(detail, mode));
  Var<Scalar> left2 = avg_pool2d(left2_conv_(detail, mode), 3, 2, 1);
  Var<Scalar> right1 = upsample_nearest(right1_conv_(semantic, mode), 4);
  Var<Scalar> right2 = right2_pw_(right2_dw_(semantic, mode));
  Var<Scalar> left = mul(left1, sigmoid(right1));
  Var<Scalar> right = upsample_nearest(mul(left2, sigmoid(right2)), 4);
  return fuse_(add(left, right), mode);
}

template <typename Scalar>
Cost Aggregation<Scalar>::cost(Index detail_channels, Index semantic_channels, Index channels, Index h, Index w) {
  const Index cd = detail_channels, cs = semantic_channels, c = channels;
  const Index h8 = h / 8, w8 = w / 8, h16 = h / 16, w16 = w / 16, h32 = h / 32, w32 = w / 32;
  return conv_bn_cost(cd, cd, 3, h8, w8, int(cd)) + conv_cost(cd, c, 1, h8, w8) +
         conv_bn_cost(cd, c, 3, h16, w16) + conv_bn_cost(cs, c, 3, h32, w32) +
         conv_bn_cost(cs, cs, 3, h32, w32, int(cs)) + conv_cost(cs, c, 1, h32, w32) + conv_bn_cost(c, c, 3, h8, w8);
}

// AuxHead ---------------------------------------------------------------------

template <typename Scalar>
AuxHead<Scalar>::AuxHead(const LayerScope<Scalar>& scope, Index in_channels, int factor, Index num_classes)
    : hidden_(scope.child("hidden"), in_channels, in_channels, 3),
      classifier_(scope.child("classifier"), in_channels, num_classes * factor * factor, 3, 1, 1, true),
      factor_(factor) {}

template <typename Scalar>
Var<Scalar> AuxHead<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  return pixel_shuffle(classifier_(hidden_(x, mode)), factor_);
}

template <typename Scalar>
Cost AuxHead<Scalar>::cost(Index in_channels, int factor, Index num_classes, Index h, Index w) {
  return conv_bn_cost(in_channels, in_channels, 3, h, w) +
         conv_cost(in_channels, num_classes * factor * factor, 3, h, w, 1, true);
}

#define WEEDSENSE_INSTANTIATE(S)        \
  template class DetailBranch<S>;       \
  template class StemBlock<S>;          \
  template class UIBBlock<S>;           \
  template class ContextEmbedding<S>;   \
  template class SemanticBranch<S>;     \
  template class Aggregation<S>;        \
  template class AuxHead<S>;

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
