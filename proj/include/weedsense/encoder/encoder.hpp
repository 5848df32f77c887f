#pragma once

#include <array>
#include <string>
#include <vector>

#include "weedsense/core/layers.hpp"

namespace weedsense {

/// Depthwise kernel sizes of a UIB block, written S[start]-M[mid]-E[end].
/// A size of 0 skips that convolution.
struct KernelConfig {
  int start = 0;
  int mid = 3;
  int end = 0;

  /// Lower-case compact form, e.g. "s0m3e0".
  std::string str() const;
  /// Accepts "s0m3e0" and "S0-M3-E0" forms.
  static KernelConfig parse(const std::string& text);
  /// The seven configurations of the kernel ablation grid.
  static const std::vector<KernelConfig>& ablation_grid();

  friend bool operator==(const KernelConfig& a, const KernelConfig& b) {
    return a.start == b.start && a.mid == b.mid && a.end == b.end;
  }
};

struct UIBSpec {
  int kernel_start = 0;
  int kernel_mid = 3;
  int kernel_end = 0;
  int expansion_ratio = 6;
  bool use_se = true;
  int stride = 1;
  Index in_channels = 0;
  Index out_channels = 0;
  double layer_scale_init = 1e-5;

  Index expanded_channels() const { return in_channels * expansion_ratio; }
  bool residual() const { return stride == 1 && in_channels == out_channels; }
  /// Throws ConfigError naming `where` for unsupported kernels or a stride
  /// with no mid convolution to carry it.
  void validate(const std::string& where) const;
};

struct BranchSpec {
  std::array<Index, 3> detail_channels{64, 64, 128};
  std::array<Index, 4> semantic_channels{16, 32, 64, 128};
  std::array<int, 3> uib_blocks_per_stage{2, 2, 4};
  int expansion_ratio = 6;
};

/// Three ConvBNReLU stages (2, 3, 3 convolutions), each opening with stride 2.
template <typename Scalar>
class DetailBranch {
 public:
  DetailBranch() = default;
  DetailBranch(const LayerScope<Scalar>& scope, const std::array<Index, 3>& channels);

  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

  static Cost cost(const std::array<Index, 3>& channels, Index h, Index w);

 private:
  std::vector<ConvBN<Scalar>> layers_;
};

/// Stride-2 conv, then {1x1 reduce, stride-2 3x3} in parallel with a stride-2
/// max-pool, concatenated and fused by a 3x3 conv. Output at H/4.
template <typename Scalar>
class StemBlock {
 public:
  StemBlock() = default;
  StemBlock(const LayerScope<Scalar>& scope, Index channels);

  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

  static Cost cost(Index channels, Index h, Index w);

 private:
  ConvBN<Scalar> conv_, reduce_, down_, fuse_;
};

/// Universal inverted bottleneck:
///   start dw -> 1x1 expand -> mid dw (strided) -> SE -> 1x1 project -> end dw
///   -> LayerScale -> + input when the residual applies.
template <typename Scalar>
class UIBBlock {
 public:
  UIBBlock() = default;
  UIBBlock(const LayerScope<Scalar>& scope, const UIBSpec& spec);

  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

  const UIBSpec& spec() const { return spec_; }
  static Cost cost(const UIBSpec& spec, Index h, Index w);

 private:
  UIBSpec spec_;
  ConvBN<Scalar> dw_start_, expand_, dw_mid_, project_, dw_end_;
  Parameter<Scalar>* se_reduce_ = nullptr;
  Parameter<Scalar>* se_expand_ = nullptr;
  Parameter<Scalar>* layer_scale_ = nullptr;
};

/// Global pool -> BN -> 1x1 ConvBNReLU -> broadcast add -> 3x3 ConvBNReLU.
template <typename Scalar>
class ContextEmbedding {
 public:
  ContextEmbedding() = default;
  ContextEmbedding(const LayerScope<Scalar>& scope, Index channels);

  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

  static Cost cost(Index channels, Index h, Index w);

 private:
  BatchNorm2d<Scalar> bn_;
  ConvBN<Scalar> gap_conv_, fuse_;
};

template <typename Scalar>
struct SemanticFeatures {
  Var<Scalar> stem;     // H/4
  Var<Scalar> s3;       // H/8
  Var<Scalar> s4;       // H/16
  Var<Scalar> s5;       // H/32, before context embedding
  Var<Scalar> context;  // H/32, after context embedding
};

template <typename Scalar>
class SemanticBranch {
 public:
  SemanticBranch() = default;
  SemanticBranch(const LayerScope<Scalar>& scope, const BranchSpec& spec, const KernelConfig& kernel, bool use_se,
                 double layer_scale_init);

  SemanticFeatures<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

  /// Block specs in execution order (stage-major).
  static std::vector<UIBSpec> block_specs(const BranchSpec& spec, const KernelConfig& kernel, bool use_se,
                                          double layer_scale_init);
  /// Separate stem, UIB-stage and context-embedding costs.
  static std::array<Cost, 3> cost(const BranchSpec& spec, const KernelConfig& kernel, bool use_se, Index h, Index w);

 private:
  StemBlock<Scalar> stem_;
  std::array<std::vector<UIBBlock<Scalar>>, 3> stages_;
  ContextEmbedding<Scalar> context_;
};

/// Bilateral guided aggregation of the H/8 detail map and the H/32 semantic
/// map into `channels` feature maps at H/8.
template <typename Scalar>
class Aggregation {
 public:
  Aggregation() = default;
  Aggregation(const LayerScope<Scalar>& scope, Index detail_channels, Index semantic_channels, Index channels);

  Var<Scalar> operator()(const Var<Scalar>& detail, const Var<Scalar>& semantic, Mode mode) const;

  static Cost cost(Index detail_channels, Index semantic_channels, Index channels, Index h, Index w);

 private:
  ConvBN<Scalar> left1_dw_, left2_conv_, right1_conv_, right2_dw_, fuse_;
  Conv2d<Scalar> left1_pw_, right2_pw_;
};

/// Training-only segmentation head on a semantic stage:
/// 3x3 ConvBNReLU -> 3x3 conv to classes*f^2 -> pixel_shuffle(f).
template <typename Scalar>
class AuxHead {
 public:
  AuxHead() = default;
  AuxHead(const LayerScope<Scalar>& scope, Index in_channels, int factor, Index num_classes);

  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

  int factor() const { return factor_; }
  static Cost cost(Index in_channels, int factor, Index num_classes, Index h, Index w);

 private:
  ConvBN<Scalar> hidden_;
  Conv2d<Scalar> classifier_;
  int factor_ = 1;
};

}  // namespace weedsense
