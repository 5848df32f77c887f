#include <cmath>

#include "weedsense/core/ops.hpp"
#include "weedsense/core/random.hpp"

namespace weedsense {
namespace {

template <typename Scalar>
using Vec = typename Tensor<Scalar>::Vector;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename Scalar>
void accumulate(const std::shared_ptr<Node<Scalar>>& n, const Vec<Scalar>& g) {
  if (n && n->requires_grad) n->grad_buffer().vec() += g;
}

}  // namespace

template <typename Scalar>
Var<Scalar> activation(const Var<Scalar>& input, Activation kind) {
  const Vec<Scalar>& x = input.value().vec();
  Tensor<Scalar> y(input.shape());
  switch (kind) {
    case Activation::kRelu:
      y.vec() = x.cwiseMax(Scalar(0));
      break;
    case Activation::kSigmoid:
      y.vec() = x.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
      break;
    case Activation::kGelu:
      y.vec() = x.unaryExpr([](Scalar v) {
        return static_cast<Scalar>(0.5 * v * (1.0 + std::erf(static_cast<double>(v) * kInvSqrt2)));
      });
      break;
  }
  const bool needs = detail::needs_grad<Scalar>({&input});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (!needs) return out;
  Node<Scalar>* self = out.node();
  auto xn = input.node_ptr();
  self->backward = [self, xn, kind]() {
    const Vec<Scalar>& x = xn->value().vec();
    const Vec<Scalar>& g = self->grad.vec();
    switch (kind) {
      case Activation::kRelu:
        accumulate<Scalar>(xn, (x.array() > Scalar(0)).select(g, Scalar(0)));
        break;
      case Activation::kSigmoid: {
        const Vec<Scalar>& y = self->value().vec();
        accumulate<Scalar>(xn, (g.array() * y.array() * (Scalar(1) - y.array())).matrix());
        break;
      }
      case Activation::kGelu:
        accumulate<Scalar>(xn, (g.array() * x.array().unaryExpr([](Scalar v) {
                                  const double d = v;
                                  const double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
                                  return static_cast<Scalar>(cdf + d * kInvSqrt2Pi *
                                                                      std::exp(-0.5 * d * d));
                                })).matrix());
        break;
    }
  };
  return out;
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor<Scalar> y(a.shape());
  y.vec() = a.value().vec() + b.value().vec();
  const bool needs = detail::needs_grad<Scalar>({&a, &b});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    self->backward = [self, an, bn]() {
      accumulate<Scalar>(an, self->grad.vec());
      accumulate<Scalar>(bn, self->grad.vec());
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor<Scalar> y(a.shape());
  y.vec() = a.value().vec().cwiseProduct(b.value().vec());
  const bool needs = detail::needs_grad<Scalar>({&a, &b});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    self->backward = [self, an, bn]() {
      const Vec<Scalar>& g = self->grad.vec();
      if (an->requires_grad) accumulate<Scalar>(an, g.cwiseProduct(bn->value().vec()));
      if (bn->requires_grad) accumulate<Scalar>(bn, g.cwiseProduct(an->value().vec()));
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, double factor) {
  const Scalar f = static_cast<Scalar>(factor);
  Tensor<Scalar> y(x.shape());
  y.vec() = x.value().vec() * f;
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, f]() { accumulate<Scalar>(xn, self->grad.vec() * f); };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> channel_scale(const Var<Scalar>& x, const Var<Scalar>& s) {
  if (x.shape().rank() != 4) throw DimensionError("channel_scale: input must be rank 4, got " + x.shape().str());
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const bool shared = s.shape().rank() == 1;
  const bool ok = shared ? s.dim(0) == c
                         : (s.shape().rank() == 2 && s.dim(0) == n && s.dim(1) == c);
  if (!ok) {
    throw DimensionError("channel_scale: gain shape " + s.shape().str() + " does not match channels of " +
                         x.shape().str() + " on axis 1");
  }
  Tensor<Scalar> y(x.shape());
  const Scalar* xv = x.value().data();
  const Scalar* sv = s.value().data();
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar g = sv[shared ? ch : i * c + ch];
      const Index off = (i * c + ch) * plane;
      Eigen::Map<Vec<Scalar>>(y.data() + off, plane) = Eigen::Map<const Vec<Scalar>>(xv + off, plane) * g;
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&x, &s});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    auto sn = s.node_ptr();
    self->backward = [self, xn, sn, n, c, plane, shared]() {
      const Scalar* gy = self->grad.data();
      const Scalar* xv = xn->value().data();
      const Scalar* sv = sn->value().data();
      Scalar* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
      Scalar* gs = sn->requires_grad ? sn->grad_buffer().data() : nullptr;
      for (Index i = 0; i < n; ++i) {
        for (Index ch = 0; ch < c; ++ch) {
          const Index si = shared ? ch : i * c + ch;
          const Index off = (i * c + ch) * plane;
          Eigen::Map<const Vec<Scalar>> g(gy + off, plane);
          if (gx) Eigen::Map<Vec<Scalar>>(gx + off, plane) += g * sv[si];
          if (gs) gs[si] += g.dot(Eigen::Map<const Vec<Scalar>>(xv + off, plane));
        }
      }
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> add_spatial_broadcast(const Var<Scalar>& x, const Var<Scalar>& y) {
  if (x.shape().rank() != 4) {
    throw DimensionError("add_spatial_broadcast: input must be rank 4, got " + x.shape().str());
  }
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (y.shape() != Shape{n, c, 1, 1}) {
    throw DimensionError("add_spatial_broadcast: expected [" + std::to_string(n) + "," + std::to_string(c) +
                         ",1,1], got " + y.shape().str());
  }
  Tensor<Scalar> z(x.shape());
  for (Index p = 0; p < n * c; ++p) {
    Eigen::Map<Vec<Scalar>>(z.data() + p * plane, plane) =
        Eigen::Map<const Vec<Scalar>>(x.value().data() + p * plane, plane).array() + y.value()[p];
  }
  const bool needs = detail::needs_grad<Scalar>({&x, &y});
  Var<Scalar> out = detail::make_output(std::move(z), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    auto yn = y.node_ptr();
    self->backward = [self, xn, yn, n, c, plane]() {
      accumulate<Scalar>(xn, self->grad.vec());
      if (yn->requires_grad) {
        Tensor<Scalar>& gy = yn->grad_buffer();
        for (Index p = 0; p < n * c; ++p) {
          gy[p] += Eigen::Map<const Vec<Scalar>>(self->grad.data() + p * plane, plane).sum();
        }
      }
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& input, double p, Mode mode, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must be in [0, 1), got " + std::to_string(p));
  if (mode == Mode::kEval || p == 0.0) return input;
  Rng rng(seed);
  const Index n = input.value().numel();
  Vec<Scalar> mask(n);
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index i = 0; i < n; ++i) mask[i] = rng.uniform() < p ? Scalar(0) : keep_scale;
  Tensor<Scalar> y(input.shape());
  y.vec() = input.value().vec().cwiseProduct(mask);
  const bool needs = detail::needs_grad<Scalar>({&input});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = input.node_ptr();
    self->backward = [self, xn, mask = std::move(mask)]() {
      accumulate<Scalar>(xn, self->grad.vec().cwiseProduct(mask));
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> y = x.value().reshaped(std::move(shape));
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn]() { accumulate<Scalar>(xn, self->grad.vec()); };
  }
  return out;
}

#define WEEDSENSE_INSTANTIATE(S)                                                   \
  template Var<S> activation(const Var<S>&, Activation);                           \
  template Var<S> add(const Var<S>&, const Var<S>&);                               \
  template Var<S> mul(const Var<S>&, const Var<S>&);                               \
  template Var<S> scale(const Var<S>&, double);                                    \
  template Var<S> channel_scale(const Var<S>&, const Var<S>&);                     \
  template Var<S> add_spatial_broadcast(const Var<S>&, const Var<S>&);             \
  template Var<S> dropout(const Var<S>&, double, Mode, std::uint64_t);             \
  template Var<S> reshape(const Var<S>&, Shape);

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
