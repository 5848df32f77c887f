#include <cmath>

#include "weedsense/core/ops.hpp"

namespace weedsense {
namespace {

template <typename Scalar>
using Vec = typename Tensor<Scalar>::Vector;
template <typename Scalar>
using MapRM = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using CMapRM = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require_vector(const Shape& s, Index len, const char* op, const char* what) {
  if (s.rank() != 1 || s[0] != len) {
    throw DimensionError(std::string(op) + ": " + what + " must be [" + std::to_string(len) + "], got " +
                         s.str());
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> batch_norm2d(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                         const BatchNormState<Scalar>& state, Mode mode) {
  if (input.shape().rank() != 4) {
    throw DimensionError("batch_norm2d: input must be rank 4, got " + input.shape().str());
  }
  const Index n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  require_vector(gamma.shape(), c, "batch_norm2d", "gamma (channel axis 1)");
  require_vector(beta.shape(), c, "batch_norm2d", "beta (channel axis 1)");
  if (state.running_mean == nullptr || state.running_var == nullptr) {
    throw ConfigError("batch_norm2d: running statistics are not bound");
  }
  require_vector(state.running_mean->shape(), c, "batch_norm2d", "running_mean (channel axis 1)");
  require_vector(state.running_var->shape(), c, "batch_norm2d", "running_var (channel axis 1)");
  if (!(state.eps > 0.0)) throw ConfigError("batch_norm2d: eps must be positive");
  const Index count = n * plane;
  if (mode == Mode::kTrain && count < 2) {
    throw DimensionError("batch_norm2d: train mode needs at least 2 values per channel, got input " +
                         input.shape().str());
  }

  const Scalar* x = input.value().data();
  Vec<Scalar> mean(c), invstd(c);
  if (mode == Mode::kTrain) {
    // Two-pass statistics in double for stability.
    for (Index ch = 0; ch < c; ++ch) {
      double s = 0;
      for (Index i = 0; i < n; ++i) {
        s += Eigen::Map<const Vec<Scalar>>(x + (i * c + ch) * plane, plane).template cast<double>().sum();
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (Index i = 0; i < n; ++i) {
        ss += (Eigen::Map<const Vec<Scalar>>(x + (i * c + ch) * plane, plane).template cast<double>().array() - mu)
                  .square()
                  .sum();
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<Scalar>(mu);
      invstd[ch] = static_cast<Scalar>(1.0 / std::sqrt(var + state.eps));
      const double m = state.momentum;
      Tensor<Scalar>& rm = *state.running_mean;
      Tensor<Scalar>& rv = *state.running_var;
      rm[ch] = static_cast<Scalar>((1.0 - m) * rm[ch] + m * mu);
      rv[ch] = static_cast<Scalar>((1.0 - m) * rv[ch] + m * var * count / (count - 1.0));
    }
  } else {
    for (Index ch = 0; ch < c; ++ch) {
      mean[ch] = (*state.running_mean)[ch];
      invstd[ch] = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>((*state.running_var)[ch]) + state.eps));
    }
  }

  Tensor<Scalar> xhat(input.shape());
  Tensor<Scalar> y(input.shape());
  const Scalar* g = gamma.value().data();
  const Scalar* b = beta.value().data();
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (i * c + ch) * plane;
      auto xh = Eigen::Map<Vec<Scalar>>(xhat.data() + off, plane);
      xh = (Eigen::Map<const Vec<Scalar>>(x + off, plane).array() - mean[ch]) * invstd[ch];
      Eigen::Map<Vec<Scalar>>(y.data() + off, plane) = (xh.array() * g[ch] + b[ch]).matrix();
    }
  }

  const bool needs = detail::needs_grad<Scalar>({&input, &gamma, &beta});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (!needs) return out;
  Node<Scalar>* self = out.node();
  auto xn = input.node_ptr();
  auto gn = gamma.node_ptr();
  auto bn = beta.node_ptr();
  self->backward = [self, xn, gn, bn, xhat = std::move(xhat), invstd, n, c, plane, count, mode]() {
    const Scalar* gy = self->grad.data();
    const Scalar* gam = gn->value().data();
    Vec<Scalar> sum_g = Vec<Scalar>::Zero(c), sum_gx = Vec<Scalar>::Zero(c);
    for (Index i = 0; i < n; ++i) {
      for (Index ch = 0; ch < c; ++ch) {
        const Index off = (i * c + ch) * plane;
        Eigen::Map<const Vec<Scalar>> g(gy + off, plane);
        sum_g[ch] += g.sum();
        sum_gx[ch] += g.dot(Eigen::Map<const Vec<Scalar>>(xhat.data() + off, plane));
      }
    }
    if (gn->requires_grad) gn->grad_buffer().vec() += sum_gx;
    if (bn->requires_grad) bn->grad_buffer().vec() += sum_g;
    if (!xn->requires_grad) return;
    Scalar* gx = xn->grad_buffer().data();
    const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
    for (Index i = 0; i < n; ++i) {
      for (Index ch = 0; ch < c; ++ch) {
        const Index off = (i * c + ch) * plane;
        Eigen::Map<const Vec<Scalar>> g(gy + off, plane);
        Eigen::Map<Vec<Scalar>> dx(gx + off, plane);
        const Scalar k = gam[ch] * invstd[ch];
        if (mode == Mode::kTrain) {
          Eigen::Map<const Vec<Scalar>> xh(xhat.data() + off, plane);
          dx.array() += k * (g.array() - sum_g[ch] * inv_count - xh.array() * (sum_gx[ch] * inv_count));
        } else {
          dx += g * k;
        }
      }
    }
  };
  return out;
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       double eps) {
  if (input.shape().rank() < 1) throw DimensionError("layer_norm: input has no axes");
  const Index d = input.shape().back();
  const int last = input.shape().rank() - 1;
  if (gamma.shape().rank() != 1 || gamma.dim(0) != d || beta.shape() != gamma.shape()) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) + "] to match axis " +
                         std::to_string(last) + " of " + input.shape().str());
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const Index rows = input.value().numel() / d;
  CMapRM<Scalar> x(input.value().data(), rows, d);
  Tensor<Scalar> xhat(input.shape());
  Vec<Scalar> invstd(rows);
  MapRM<Scalar> xh(xhat.data(), rows, d);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mu).square().mean();
    invstd[r] = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(var) + eps));
    xh.row(r) = (x.row(r).array() - mu) * invstd[r];
  }
  Tensor<Scalar> y(input.shape());
  MapRM<Scalar>(y.data(), rows, d) =
      (xh.array().rowwise() * gamma.value().vec().transpose().array()).rowwise() +
      beta.value().vec().transpose().array();

  const bool needs = detail::needs_grad<Scalar>({&input, &gamma, &beta});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (!needs) return out;
  Node<Scalar>* self = out.node();
  auto xn = input.node_ptr();
  auto gn = gamma.node_ptr();
  auto bn = beta.node_ptr();
  self->backward = [self, xn, gn, bn, xhat = std::move(xhat), invstd, rows, d]() {
    CMapRM<Scalar> g(self->grad.data(), rows, d);
    CMapRM<Scalar> xh(xhat.data(), rows, d);
    if (gn->requires_grad) gn->grad_buffer().vec() += (g.array() * xh.array()).colwise().sum().transpose().matrix();
    if (bn->requires_grad) bn->grad_buffer().vec() += g.colwise().sum().transpose();
    if (!xn->requires_grad) return;
    MapRM<Scalar> gx(xn->grad_buffer().data(), rows, d);
    const auto gam = gn->value().vec().transpose().array();
    for (Index r = 0; r < rows; ++r) {
      const auto dxh = (g.row(r).array() * gam).eval();
      const Scalar m1 = dxh.mean();
      const Scalar m2 = (dxh * xh.row(r).array()).mean();
      gx.row(r).array() += invstd[r] * (dxh - m1 - xh.row(r).array() * m2);
    }
  };
  return out;
}

#define WEEDSENSE_INSTANTIATE(S)                                                                  \
  template Var<S> batch_norm2d(const Var<S>&, const Var<S>&, const Var<S>&,                        \
                               const BatchNormState<S>&, Mode);                                    \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, double);

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
