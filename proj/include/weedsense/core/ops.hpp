#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "weedsense/core/autograd.hpp"

namespace weedsense {

enum class Activation { kRelu, kGelu, kSigmoid };

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Running statistics and hyper-parameters of a batch-norm layer.
/// Running buffers are updated in place by train-mode forwards.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar>* running_mean = nullptr;
  Tensor<Scalar>* running_var = nullptr;
  double eps = 1e-5;
  double momentum = 0.1;
};

// Convolution and normalization -------------------------------------------

/// Cross-correlation over NCHW input with zero padding.
/// weight: [Cout, Cin/groups, kh, kw]; bias: [Cout] or undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   Conv2dOptions opts);

template <typename Scalar>
Var<Scalar> batch_norm2d(const Var<Scalar>& input, const Var<Scalar>& gamma,
                         const Var<Scalar>& beta, const BatchNormState<Scalar>& state, Mode mode);

/// Normalizes over the last axis, then applies gamma/beta of length D.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       double eps = 1e-5);

// Elementwise -----------------------------------------------------------------

template <typename Scalar>
Var<Scalar> activation(const Var<Scalar>& input, Activation kind);

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) { return activation(x, Activation::kRelu); }
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) { return activation(x, Activation::kGelu); }
template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) { return activation(x, Activation::kSigmoid); }

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);

/// Multiplies every element by a constant.
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, double factor);

/// x: [N,C,H,W]; s: [C] (shared across the batch) or [N,C]. Per-channel gain.
template <typename Scalar>
Var<Scalar> channel_scale(const Var<Scalar>& x, const Var<Scalar>& s);

/// x: [N,C,H,W] plus y: [N,C,1,1] broadcast over space.
template <typename Scalar>
Var<Scalar> add_spatial_broadcast(const Var<Scalar>& x, const Var<Scalar>& y);

/// Zeroes elements with probability p and rescales survivors by 1/(1-p) in
/// train mode; identity in eval mode. The mask is a pure function of seed.
template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& input, double p, Mode mode, std::uint64_t seed);

// Shape and resampling --------------------------------------------------------

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);

/// [N, C*r*r, H, W] -> [N, C, H*r, W*r].
template <typename Scalar>
Var<Scalar> pixel_shuffle(const Var<Scalar>& x, int r);

/// Inverse of pixel_shuffle.
template <typename Scalar>
Var<Scalar> pixel_unshuffle(const Var<Scalar>& x, int r);

template <typename Scalar>
Var<Scalar> adaptive_avg_pool(const Var<Scalar>& x, Index out_h, Index out_w);

template <typename Scalar>
Var<Scalar> max_pool2d(const Var<Scalar>& x, int kernel, int stride, int padding);

/// Average pooling; padded cells count toward the divisor.
template <typename Scalar>
Var<Scalar> avg_pool2d(const Var<Scalar>& x, int kernel, int stride, int padding);

template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, int factor);

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b);

// Dense layers ----------------------------------------------------------------

/// Affine map over the last axis. weight: [Dout, Din]; bias: [Dout] or undefined.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias);

/// Squeeze-and-excitation gate:
/// s = sigmoid(W_expand * relu(W_reduce * avgpool(x))), output = x * s.
template <typename Scalar>
Var<Scalar> se_block(const Var<Scalar>& input, const Var<Scalar>& w_reduce,
                     const Var<Scalar>& w_expand);

/// Multi-head scaled dot-product self-attention over x: [N, T, D] with
/// square projections (no biases), concatenated heads and an output projection.
template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& x, int heads, const Var<Scalar>& wq,
                                 const Var<Scalar>& wk, const Var<Scalar>& wv,
                                 const Var<Scalar>& wo);

/// Softmax attention weights [N, heads, T, T] (values only).
template <typename Scalar>
Tensor<Scalar> attention_weights(const Tensor<Scalar>& x, int heads, const Tensor<Scalar>& wq,
                                 const Tensor<Scalar>& wk);

// Reductions and losses -------------------------------------------------------

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x);

/// Sum of x * mask, where mask is a constant tensor of x's shape.
template <typename Scalar>
Var<Scalar> masked_sum(const Var<Scalar>& x, const Tensor<Scalar>& mask);

/// sum_i weights[i] * terms[i] over scalar terms.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms, const std::vector<double>& weights);

/// Per-pixel softmax cross-entropy over logits [N,C,H,W] against integer
/// targets (N*H*W, row-major). Each pixel is weighted by the weight of its
/// target class; the result is divided by the total weight (0 if it is 0).
template <typename Scalar>
Var<Scalar> weighted_cross_entropy_2d(const Var<Scalar>& logits,
                                      const std::vector<std::int32_t>& targets,
                                      const std::vector<double>& class_weights);

/// Mean softmax cross-entropy over logits [N,K].
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<std::int32_t>& targets);

/// Mean squared error of pred (N values) against targets.
template <typename Scalar>
Var<Scalar> mse_loss(const Var<Scalar>& pred, const std::vector<double>& targets);

// Operation accounting --------------------------------------------------------

/// Counts multiply-accumulates executed by conv/linear/attention forwards on
/// this thread while alive. Used to cross-check the analytic FLOP profile.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::int64_t macs() const { return macs_; }
  static void add(std::int64_t macs);

 private:
  std::int64_t macs_ = 0;
  MacCounter* previous_ = nullptr;
};

}  // namespace weedsense
