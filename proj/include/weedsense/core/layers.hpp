#pragma once

#include <string>

#include "weedsense/core/ops.hpp"
#include "weedsense/core/random.hpp"

namespace weedsense {

/// Where a layer registers its parameters. Every parameter is initialized from
/// derive_seed(seed, full_name), so weights depend only on the seed and the
/// parameter's path, never on construction order.
template <typename Scalar>
struct LayerScope {
  ParameterStore<Scalar>* store = nullptr;
  std::uint64_t seed = 0;
  std::string prefix;

  LayerScope child(const std::string& name) const {
    return {store, seed, prefix.empty() ? name : prefix + "." + name};
  }
  std::string path(const std::string& leaf) const { return prefix.empty() ? leaf : prefix + "." + leaf; }
  std::uint64_t seed_for(const std::string& leaf) const { return derive_seed(seed, path(leaf)); }
};

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  /// Kaiming-uniform weight; "same" padding k/2 unless overridden.
  Conv2d(const LayerScope<Scalar>& scope, Index in_channels, Index out_channels, int kernel, int stride = 1,
         int groups = 1, bool bias = false);

  Var<Scalar> operator()(const Var<Scalar>& x) const;

  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  const Conv2dOptions& options() const { return opts_; }

 private:
  Parameter<Scalar>* weight_ = nullptr;
  Parameter<Scalar>* bias_ = nullptr;
  Conv2dOptions opts_;
  Index in_ = 0, out_ = 0;
  int kernel_ = 0;
};

template <typename Scalar>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const LayerScope<Scalar>& scope, Index channels);

  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

 private:
  Parameter<Scalar>* gamma_ = nullptr;
  Parameter<Scalar>* beta_ = nullptr;
  Parameter<Scalar>* running_mean_ = nullptr;
  Parameter<Scalar>* running_var_ = nullptr;
};

/// Convolution (no bias) followed by batch norm and an optional ReLU.
template <typename Scalar>
class ConvBN {
 public:
  ConvBN() = default;
  ConvBN(const LayerScope<Scalar>& scope, Index in_channels, Index out_channels, int kernel, int stride = 1,
         int groups = 1, bool relu = true);

  Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

 private:
  Conv2d<Scalar> conv_;
  BatchNorm2d<Scalar> bn_;
  bool relu_ = true;
};

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const LayerScope<Scalar>& scope, Index in_features, Index out_features, bool bias = true);

  Var<Scalar> operator()(const Var<Scalar>& x) const;

 private:
  Parameter<Scalar>* weight_ = nullptr;
  Parameter<Scalar>* bias_ = nullptr;
};

template <typename Scalar>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const LayerScope<Scalar>& scope, Index dim);

  Var<Scalar> operator()(const Var<Scalar>& x) const;

 private:
  Parameter<Scalar>* gamma_ = nullptr;
  Parameter<Scalar>* beta_ = nullptr;
};

/// Analytic trainable-parameter and multiply-accumulate totals of a layer
/// or module, computed from shapes alone.
struct Cost {
  Index params = 0;
  Index macs = 0;

  Cost& operator+=(const Cost& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
  friend Cost operator+(Cost a, const Cost& b) { return a += b; }
};

inline Cost conv_cost(Index cin, Index cout, int kernel, Index out_h, Index out_w, int groups = 1,
                      bool bias = false) {
  const Index w = cout * (cin / groups) * kernel * kernel;
  return {w + (bias ? cout : 0), w * out_h * out_w};
}
inline Cost bn_cost(Index c) { return {2 * c, 0}; }
inline Cost conv_bn_cost(Index cin, Index cout, int kernel, Index out_h, Index out_w, int groups = 1) {
  return conv_cost(cin, cout, kernel, out_h, out_w, groups) + bn_cost(cout);
}
inline Cost linear_cost(Index din, Index dout, bool bias = true, Index rows = 1) {
  return {din * dout + (bias ? dout : 0), din * dout * rows};
}
inline Cost layer_norm_cost(Index d) { return {2 * d, 0}; }

/// Optional Var for an optional parameter.
template <typename Scalar>
Var<Scalar> maybe_param(Parameter<Scalar>* p) {
  return p != nullptr ? param_var(*p) : Var<Scalar>();
}

}  // namespace weedsense
