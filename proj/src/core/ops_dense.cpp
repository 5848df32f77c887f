#include <cmath>

#include "weedsense/core/ops.hpp"

namespace weedsense {
namespace {

template <typename Scalar>
using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapRM = Eigen::Map<MatRM<Scalar>>;
template <typename Scalar>
using CMapRM = Eigen::Map<const MatRM<Scalar>>;

// Row-wise softmax of S (T x T) in place.
template <typename Scalar>
void softmax_rows(MatRM<Scalar>& s) {
  for (Index r = 0; r < s.rows(); ++r) {
    const Scalar m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

struct AttnDims {
  Index n, t, d, heads, dh;
};

AttnDims attention_dims(const Shape& x, int heads) {
  if (x.rank() != 3) throw DimensionError("multi_head_attention: input must be [N,T,D], got " + x.str());
  if (heads < 1 || x[2] % heads != 0) {
    throw ConfigError("multi_head_attention: embedding dim " + std::to_string(x[2]) +
                      " not divisible by heads " + std::to_string(heads));
  }
  return {x[0], x[1], x[2], heads, x[2] / heads};
}

// Scaled dot-product attention on already-projected Q, K, V ([N,T,D] each).
template <typename Scalar>
Var<Scalar> attention_core(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, const AttnDims& a) {
  const Scalar sc = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(a.dh)));
  Tensor<Scalar> o(q.shape());
  std::vector<MatRM<Scalar>> probs(static_cast<std::size_t>(a.n * a.heads));
  MacCounter::add(2 * a.n * a.heads * a.t * a.t * a.dh);
  for (Index b = 0; b < a.n; ++b) {
    const Index base = b * a.t * a.d;
    for (Index h = 0; h < a.heads; ++h) {
      Eigen::Map<const MatRM<Scalar>, 0, Eigen::OuterStride<>> qh(q.value().data() + base + h * a.dh, a.t, a.dh,
                                                                  Eigen::OuterStride<>(a.d));
      Eigen::Map<const MatRM<Scalar>, 0, Eigen::OuterStride<>> kh(k.value().data() + base + h * a.dh, a.t, a.dh,
                                                                  Eigen::OuterStride<>(a.d));
      Eigen::Map<const MatRM<Scalar>, 0, Eigen::OuterStride<>> vh(v.value().data() + base + h * a.dh, a.t, a.dh,
                                                                  Eigen::OuterStride<>(a.d));
      MatRM<Scalar>& p = probs[static_cast<std::size_t>(b * a.heads + h)];
      p = (qh * kh.transpose()) * sc;
      softmax_rows(p);
      Eigen::Map<MatRM<Scalar>, 0, Eigen::OuterStride<>>(o.data() + base + h * a.dh, a.t, a.dh,
                                                         Eigen::OuterStride<>(a.d))
          .noalias() = p * vh;
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&q, &k, &v});
  Var<Scalar> out = detail::make_output(std::move(o), needs);
  if (!needs) return out;
  Node<Scalar>* self = out.node();
  auto qn = q.node_ptr();
  auto kn = k.node_ptr();
  auto vn = v.node_ptr();
  self->backward = [self, qn, kn, vn, a, sc, probs = std::move(probs)]() {
    using SMap = Eigen::Map<MatRM<Scalar>, 0, Eigen::OuterStride<>>;
    using CSMap = Eigen::Map<const MatRM<Scalar>, 0, Eigen::OuterStride<>>;
    Tensor<Scalar> gq(qn->value().shape()), gk(gq.shape()), gv(gq.shape());
    for (Index b = 0; b < a.n; ++b) {
      const Index base = b * a.t * a.d;
      for (Index h = 0; h < a.heads; ++h) {
        const Index off = base + h * a.dh;
        const Eigen::OuterStride<> st(a.d);
        CSMap qh(qn->value().data() + off, a.t, a.dh, st);
        CSMap kh(kn->value().data() + off, a.t, a.dh, st);
        CSMap vh(vn->value().data() + off, a.t, a.dh, st);
        CSMap go(self->grad.data() + off, a.t, a.dh, st);
        const MatRM<Scalar>& p = probs[static_cast<std::size_t>(b * a.heads + h)];
        SMap(gv.data() + off, a.t, a.dh, st).noalias() += p.transpose() * go;
        MatRM<Scalar> dp = go * vh.transpose();
        const auto rowdot = (dp.array() * p.array()).rowwise().sum().eval();
        MatRM<Scalar> ds = (p.array() * (dp.array().colwise() - rowdot)).matrix() * sc;
        SMap(gq.data() + off, a.t, a.dh, st).noalias() += ds * kh;
        SMap(gk.data() + off, a.t, a.dh, st).noalias() += ds.transpose() * qh;
      }
    }
    if (qn->requires_grad) qn->grad_buffer() += gq;
    if (kn->requires_grad) kn->grad_buffer() += gk;
    if (vn->requires_grad) vn->grad_buffer() += gv;
  };
  return out;
}

void require_square(const Shape& w, Index d, const char* name) {
  if (w != Shape{d, d}) {
    throw DimensionError(std::string("multi_head_attention: ") + name + " must be [" + std::to_string(d) + "," +
                         std::to_string(d) + "], got " + w.str());
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  const Shape& xs = input.shape();
  if (xs.rank() < 1) throw DimensionError("linear: input has no axes");
  if (weight.shape().rank() != 2) throw DimensionError("linear: weight must be [Dout,Din], got " + weight.shape().str());
  const Index din = weight.dim(1), dout = weight.dim(0);
  if (xs.back() != din) {
    throw DimensionError("linear: input axis " + std::to_string(xs.rank() - 1) + " has extent " +
                         std::to_string(xs.back()) + ", weight expects " + std::to_string(din));
  }
  if (bias.defined() && bias.shape() != Shape{dout}) {
    throw DimensionError("linear: bias must be [" + std::to_string(dout) + "], got " + bias.shape().str());
  }
  const Index rows = input.value().numel() / din;
  std::vector<Index> od = xs.dims();
  od.back() = dout;
  Tensor<Scalar> y{Shape(od)};
  MapRM<Scalar> ym(y.data(), rows, dout);
  ym.noalias() = CMapRM<Scalar>(input.value().data(), rows, din) *
                 CMapRM<Scalar>(weight.value().data(), dout, din).transpose();
  if (bias.defined()) ym.rowwise() += bias.value().vec().transpose();
  MacCounter::add(rows * din * dout);

  const bool needs = detail::needs_grad<Scalar>({&input, &weight, &bias});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (!needs) return out;
  Node<Scalar>* self = out.node();
  auto xn = input.node_ptr();
  auto wn = weight.node_ptr();
  auto bn = bias.node_ptr();
  self->backward = [self, xn, wn, bn, rows, din, dout]() {
    CMapRM<Scalar> g(self->grad.data(), rows, dout);
    if (xn->requires_grad) {
      MapRM<Scalar>(xn->grad_buffer().data(), rows, din).noalias() +=
          g * CMapRM<Scalar>(wn->value().data(), dout, din);
    }
    if (wn->requires_grad) {
      MapRM<Scalar>(wn->grad_buffer().data(), dout, din).noalias() +=
          g.transpose() * CMapRM<Scalar>(xn->value().data(), rows, din);
    }
    if (bn && bn->requires_grad) bn->grad_buffer().vec() += g.colwise().sum().transpose();
  };
  return out;
}

template <typename Scalar>
Var<Scalar> se_block(const Var<Scalar>& input, const Var<Scalar>& w_reduce, const Var<Scalar>& w_expand) {
  if (input.shape().rank() != 4) throw DimensionError("se_block: input must be rank 4, got " + input.shape().str());
  const Index n = input.dim(0), c = input.dim(1);
  if (c % 4 != 0) throw DimensionError("se_block: channel axis (1) extent " + std::to_string(c) + " not divisible by 4");
  if (w_reduce.shape() != Shape{c / 4, c} || w_expand.shape() != Shape{c, c / 4}) {
    throw DimensionError("se_block: weights must be [" + std::to_string(c / 4) + "," + std::to_string(c) + "] and [" +
                         std::to_string(c) + "," + std::to_string(c / 4) + "], got " + w_reduce.shape().str() +
                         " and " + w_expand.shape().str());
  }
  Var<Scalar> pooled = reshape(adaptive_avg_pool(input, 1, 1), Shape{n, c});
  Var<Scalar> gate = sigmoid(linear(relu(linear(pooled, w_reduce, Var<Scalar>())), w_expand, Var<Scalar>()));
  return channel_scale(input, gate);
}

template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& x, int heads, const Var<Scalar>& wq, const Var<Scalar>& wk,
                                 const Var<Scalar>& wv, const Var<Scalar>& wo) {
  const AttnDims a = attention_dims(x.shape(), heads);
  require_square(wq.shape(), a.d, "Wq");
  require_square(wk.shape(), a.d, "Wk");
  require_square(wv.shape(), a.d, "Wv");
  require_square(wo.shape(), a.d, "Wo");
  const Var<Scalar> none;
  Var<Scalar> o = attention_core(linear(x, wq, none), linear(x, wk, none), linear(x, wv, none), a);
  return linear(o, wo, none);
}

template <typename Scalar>
Tensor<Scalar> attention_weights(const Tensor<Scalar>& x, int heads, const Tensor<Scalar>& wq,
                                 const Tensor<Scalar>& wk) {
  const AttnDims a = attention_dims(x.shape(), heads);
  require_square(wq.shape(), a.d, "Wq");
  require_square(wk.shape(), a.d, "Wk");
  const Index rows = a.n * a.t;
  CMapRM<Scalar> xm(x.data(), rows, a.d);
  MatRM<Scalar> q = xm * CMapRM<Scalar>(wq.data(), a.d, a.d).transpose();
  MatRM<Scalar> k = xm * CMapRM<Scalar>(wk.data(), a.d, a.d).transpose();
  const Scalar sc = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(a.dh)));
  Tensor<Scalar> out(Shape{a.n, a.heads, a.t, a.t});
  for (Index b = 0; b < a.n; ++b) {
    for (Index h = 0; h < a.heads; ++h) {
      MatRM<Scalar> p = (q.block(b * a.t, h * a.dh, a.t, a.dh) * k.block(b * a.t, h * a.dh, a.t, a.dh).transpose()) * sc;
      softmax_rows(p);
      MapRM<Scalar>(out.data() + (b * a.heads + h) * a.t * a.t, a.t, a.t) = p;
    }
  }
  return out;
}

#define WEEDSENSE_INSTANTIATE(S)                                                                          \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                    \
  template Var<S> se_block(const Var<S>&, const Var<S>&, const Var<S>&);                                  \
  template Var<S> multi_head_attention(const Var<S>&, int, const Var<S>&, const Var<S>&, const Var<S>&,   \
                                       const Var<S>&);                                                     \
  template Tensor<S> attention_weights(const Tensor<S>&, int, const Tensor<S>&, const Tensor<S>&);

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
