#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "weedsense/core/layers.hpp"

namespace weedsense {

struct SegHeadSpec {
  Index in_channels = 128;
  Index mid_channels = 128;
  double dropout_p = 0.1;
  Index num_classes = 17;
  int upscale = 8;

  Index pre_shuffle_channels() const { return num_classes * upscale * upscale; }
  void validate() const;
};

struct TGDSpec {
  Index pooled_dim = 128;
  Index embed_dim = 512;
  int heads = 8;
  Index ffn_dim = 2048;
  std::array<Index, 2> head_hidden{1024, 512};
  Index num_weeks = 11;

  void validate() const;
};

/// 3x3 ConvBNReLU -> dropout -> 1x1 conv to classes*r^2 -> pixel_shuffle(r).
/// Returns raw per-pixel class logits.
template <typename Scalar>
class SegHead {
 public:
  SegHead() = default;
  SegHead(const LayerScope<Scalar>& scope, const SegHeadSpec& spec);

  /// `dropout_seed` selects the dropout mask in train mode.
  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode, std::uint64_t dropout_seed = 0) const;

  const SegHeadSpec& spec() const { return spec_; }
  static Cost cost(const SegHeadSpec& spec, Index h, Index w);

 private:
  SegHeadSpec spec_;
  ConvBN<Scalar> hidden_;
  Conv2d<Scalar> classifier_;
};

/// Global pool -> linear projection -> one transformer block over a single
/// token: LN(x + MHA(x)), then LN(y + FFN(y)) with a GELU FFN.
template <typename Scalar>
class TemporalGrowthDecoder {
 public:
  TemporalGrowthDecoder() = default;
  TemporalGrowthDecoder(const LayerScope<Scalar>& scope, const TGDSpec& spec);

  /// [N,C,h,w] -> [N,embed_dim].
  Var<Scalar> operator()(const Var<Scalar>& x) const;

  static Cost cost(const TGDSpec& spec);

 private:
  TGDSpec spec_;
  Linear<Scalar> proj_, ffn_in_, ffn_out_;
  Parameter<Scalar>* wq_ = nullptr;
  Parameter<Scalar>* wk_ = nullptr;
  Parameter<Scalar>* wv_ = nullptr;
  Parameter<Scalar>* wo_ = nullptr;
  LayerNorm<Scalar> attn_norm_, ffn_norm_;
};

template <typename Scalar>
struct TaskOutputs {
  Var<Scalar> height;  // [N,1], undefined when the height head is absent
  Var<Scalar> week;    // [N,num_weeks], undefined when the week head is absent
};

/// Shared trunk embed -> d1 -> d2 -> LayerNorm -> ReLU, then separate height
/// and week linear heads.
template <typename Scalar>
class TaskHeads {
 public:
  TaskHeads() = default;
  TaskHeads(const LayerScope<Scalar>& scope, const TGDSpec& spec, bool height, bool week);

  TaskOutputs<Scalar> operator()(const Var<Scalar>& embedding) const;
  /// Trunk features [N,d2] feeding both heads.
  Var<Scalar> trunk(const Var<Scalar>& embedding) const;

  static Cost cost(const TGDSpec& spec, bool height, bool week);

 private:
  Linear<Scalar> trunk_in_, trunk_out_, height_, week_;
  LayerNorm<Scalar> trunk_norm_;
  bool has_height_ = false, has_week_ = false;
};

}  // namespace weedsense
