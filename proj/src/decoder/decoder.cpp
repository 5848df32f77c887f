#include "weedsense/decoder/decoder.hpp"

#include "weedsense/core/init.hpp"

namespace weedsense {

void SegHeadSpec::validate() const {
  if (in_channels < 1 || mid_channels < 1) throw ConfigError("segmentation head: channel counts must be positive");
  if (num_classes < 2) throw ConfigError("segmentation head: need at least 2 classes");
  if (upscale < 1) throw ConfigError("segmentation head: upscale must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("segmentation head: dropout must lie in [0,1)");
}

void TGDSpec::validate() const {
  if (pooled_dim < 1 || embed_dim < 1 || ffn_dim < 1 || head_hidden[0] < 1 || head_hidden[1] < 1) {
    throw ConfigError("temporal growth decoder: widths must be positive");
  }
  if (heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("temporal growth decoder: embed dim " + std::to_string(embed_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (num_weeks < 2) throw ConfigError("temporal growth decoder: need at least 2 week classes");
}

// SegHead ---------------------------------------------------------------------

template <typename Scalar>
SegHead<Scalar>::SegHead(const LayerScope<Scalar>& scope, const SegHeadSpec& spec) : spec_(spec) {
  spec.validate();
  hidden_ = ConvBN<Scalar>(scope.child("hidden"), spec.in_channels, spec.mid_channels, 3);
  classifier_ = Conv2d<Scalar>(scope.child("classifier"), spec.mid_channels, spec.pre_shuffle_channels(), 1, 1, 1,
                               true);
}

template <typename Scalar>
Var<Scalar> SegHead<Scalar>::operator()(const Var<Scalar>& x, Mode mode, std::uint64_t dropout_seed) const {
  if (x.shape().rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw DimensionError("segmentation head: expected " + std::to_string(spec_.in_channels) +
                         " channels on axis 1, got " + x.shape().str());
  }
  Var<Scalar> y = dropout(hidden_(x, mode), spec_.dropout_p, mode, dropout_seed);
  return pixel_shuffle(classifier_(y), spec_.upscale);
}

template <typename Scalar>
Cost SegHead<Scalar>::cost(const SegHeadSpec& spec, Index h, Index w) {
  return conv_bn_cost(spec.in_channels, spec.mid_channels, 3, h, w) +
         conv_cost(spec.mid_channels, spec.pre_shuffle_channels(), 1, h, w, 1, true);
}

// TemporalGrowthDecoder -------------------------------------------------------

template <typename Scalar>
TemporalGrowthDecoder<Scalar>::TemporalGrowthDecoder(const LayerScope<Scalar>& scope, const TGDSpec& spec)
    : spec_(spec) {
  spec.validate();
  const Index e = spec.embed_dim;
  proj_ = Linear<Scalar>(scope.child("proj"), spec.pooled_dim, e);
  auto square = [&](const char* leaf) {
    const std::string name = scope.path(std::string("attn.") + leaf);
    return &scope.store->add(name, xavier_uniform<Scalar>({e, e}, e, e, derive_seed(scope.seed, name)));
  };
  wq_ = square("wq");
  wk_ = square("wk");
  wv_ = square("wv");
  wo_ = square("wo");
  attn_norm_ = LayerNorm<Scalar>(scope.child("attn_norm"), e);
  ffn_in_ = Linear<Scalar>(scope.child("ffn.in"), e, spec.ffn_dim);
  ffn_out_ = Linear<Scalar>(scope.child("ffn.out"), spec.ffn_dim, e);
  ffn_norm_ = LayerNorm<Scalar>(scope.child("ffn_norm"), e);
}

template <typename Scalar>
Var<Scalar> TemporalGrowthDecoder<Scalar>::operator()(const Var<Scalar>& x) const {
  if (x.shape().rank() != 4 || x.dim(1) != spec_.pooled_dim) {
    throw DimensionError("temporal growth decoder: expected " + std::to_string(spec_.pooled_dim) +
                         " channels on axis 1, got " + x.shape().str());
  }
  const Index n = x.dim(0), e = spec_.embed_dim;
  Var<Scalar> pooled = reshape(adaptive_avg_pool(x, 1, 1), {n, spec_.pooled_dim});
  Var<Scalar> tokens = reshape(proj_(pooled), {n, 1, e});
  Var<Scalar> attn = multi_head_attention(tokens, spec_.heads, param_var(*wq_), param_var(*wk_), param_var(*wv_),
                                          param_var(*wo_));
  Var<Scalar> y = attn_norm_(add(tokens, attn));
  Var<Scalar> z = ffn_norm_(add(y, ffn_out_(gelu(ffn_in_(y)))));
  return reshape(z, {n, e});
}

template <typename Scalar>
Cost TemporalGrowthDecoder<Scalar>::cost(const TGDSpec& spec) {
  const Index e = spec.embed_dim;
  Cost c = linear_cost(spec.pooled_dim, e);
  c += Cost{4 * e * e, 4 * e * e};
  c.macs += 2 * e;  // attention core over a single token
  c += layer_norm_cost(e);
  c += linear_cost(e, spec.ffn_dim) + linear_cost(spec.ffn_dim, e);
  c += layer_norm_cost(e);
  return c;
}

// TaskHeads -------------------------------------------------------------------

template <typename Scalar>
TaskHeads<Scalar>::TaskHeads(const LayerScope<Scalar>& scope, const TGDSpec& spec, bool height, bool week)
    : has_height_(height), has_week_(week) {
  spec.validate();
  if (!height && !week) throw ConfigError("task heads: at least one of height or week is required");
  trunk_in_ = Linear<Scalar>(scope.child("trunk.in"), spec.embed_dim, spec.head_hidden[0]);
  trunk_out_ = Linear<Scalar>(scope.child("trunk.out"), spec.head_hidden[0], spec.head_hidden[1]);
  trunk_norm_ = LayerNorm<Scalar>(scope.child("trunk.norm"), spec.head_hidden[1]);
  if (height) height_ = Linear<Scalar>(scope.child("height"), spec.head_hidden[1], 1);
  if (week) week_ = Linear<Scalar>(scope.child("week"), spec.head_hidden[1], spec.num_weeks);
}

template <typename Scalar>
Var<Scalar> TaskHeads<Scalar>::trunk(const Var<Scalar>& embedding) const {
  return relu(trunk_norm_(trunk_out_(trunk_in_(embedding))));
}

template <typename Scalar>
TaskOutputs<Scalar> TaskHeads<Scalar>::operator()(const Var<Scalar>& embedding) const {
  Var<Scalar> t = trunk(embedding);
  TaskOutputs<Scalar> out;
  if (has_height_) out.height = height_(t);
  if (has_week_) out.week = week_(t);
  return out;
}

template <typename Scalar>
Cost TaskHeads<Scalar>::cost(const TGDSpec& spec, bool height, bool week) {
  const auto [d1, d2] = spec.head_hidden;
  Cost c = linear_cost(spec.embed_dim, d1) + linear_cost(d1, d2) + layer_norm_cost(d2);
  if (height) c += linear_cost(d2, 1);
  if (week) c += linear_cost(d2, spec.num_weeks);
  return c;
}

#define WEEDSENSE_INSTANTIATE(S)            \
  template class SegHead<S>;                \
  template class TemporalGrowthDecoder<S>;  \
  template class TaskHeads<S>;

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
