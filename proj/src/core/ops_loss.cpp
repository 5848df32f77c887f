#include <cmath>

#include "weedsense/core/ops.hpp"

namespace weedsense {
namespace {

template <typename Scalar>
using Vec = typename Tensor<Scalar>::Vector;

thread_local MacCounter* active_counter = nullptr;

template <typename Scalar>
Var<Scalar> scalar_output(double value, bool needs) {
  return detail::make_output(Tensor<Scalar>(Shape{1}, static_cast<Scalar>(value)), needs);
}

}  // namespace

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }

MacCounter::~MacCounter() {
  active_counter = previous_;
  if (previous_ != nullptr) previous_->macs_ += macs_;
}

void MacCounter::add(std::int64_t macs) {
  if (active_counter != nullptr) active_counter->macs_ += macs;
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = scalar_output<Scalar>(x.value().vec().template cast<double>().sum(), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn]() { xn->grad_buffer().vec().array() += self->grad[0]; };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> masked_sum(const Var<Scalar>& x, const Tensor<Scalar>& mask) {
  x.value().require_same_shape(mask, "masked_sum");
  const bool needs = detail::needs_grad<Scalar>({&x});
  const double total = x.value().vec().template cast<double>().dot(mask.vec().template cast<double>());
  Var<Scalar> out = scalar_output<Scalar>(total, needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, mask]() { xn->grad_buffer().vec() += mask.vec() * self->grad[0]; };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) throw DimensionError("weighted_sum: term and weight counts differ");
  double total = 0;
  bool needs = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().numel() != 1) {
      throw DimensionError("weighted_sum: term " + std::to_string(i) + " is not scalar: " + terms[i].shape().str());
    }
    total += weights[i] * static_cast<double>(terms[i].value()[0]);
    needs = needs || detail::needs_grad<Scalar>({&terms[i]});
  }
  Var<Scalar> out = scalar_output<Scalar>(total, needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    std::vector<std::shared_ptr<Node<Scalar>>> nodes;
    for (const auto& t : terms) nodes.push_back(t.node_ptr());
    self->backward = [self, nodes, weights]() {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i]->requires_grad) nodes[i]->grad_buffer()[0] += static_cast<Scalar>(weights[i]) * self->grad[0];
      }
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> weighted_cross_entropy_2d(const Var<Scalar>& logits, const std::vector<std::int32_t>& targets,
                                      const std::vector<double>& class_weights) {
  if (logits.shape().rank() != 4) {
    throw DimensionError("weighted_cross_entropy_2d: logits must be [N,C,H,W], got " + logits.shape().str());
  }
  const Index n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  if (static_cast<Index>(targets.size()) != n * plane) {
    throw DimensionError("weighted_cross_entropy_2d: " + std::to_string(targets.size()) + " targets for logits " +
                         logits.shape().str());
  }
  if (static_cast<Index>(class_weights.size()) != c) {
    throw DimensionError("weighted_cross_entropy_2d: " + std::to_string(class_weights.size()) +
                         " class weights for channel axis (1) extent " + std::to_string(c));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= c) {
      throw DataError("weighted_cross_entropy_2d: target " + std::to_string(targets[i]) + " at pixel " +
                      std::to_string(i) + " outside [0," + std::to_string(c) + ")");
    }
  }

  // Per-pixel log-sum-exp, computed channel-plane by channel-plane.
  const Scalar* x = logits.value().data();
  std::vector<double> lse(static_cast<std::size_t>(n * plane));
  for (Index b = 0; b < n; ++b) {
    double* l = lse.data() + b * plane;
    const Scalar* xb = x + b * c * plane;
    std::vector<double> m(xb, xb + plane);
    for (Index ch = 1; ch < c; ++ch) {
      for (Index p = 0; p < plane; ++p) m[p] = std::max(m[p], static_cast<double>(xb[ch * plane + p]));
    }
    std::fill(l, l + plane, 0.0);
    for (Index ch = 0; ch < c; ++ch) {
      for (Index p = 0; p < plane; ++p) l[p] += std::exp(static_cast<double>(xb[ch * plane + p]) - m[p]);
    }
    for (Index p = 0; p < plane; ++p) l[p] = m[p] + std::log(l[p]);
  }
  double num = 0, den = 0;
  for (Index b = 0; b < n; ++b) {
    for (Index p = 0; p < plane; ++p) {
      const std::int32_t t = targets[static_cast<std::size_t>(b * plane + p)];
      const double w = class_weights[static_cast<std::size_t>(t)];
      if (w == 0.0) continue;
      num += w * (lse[static_cast<std::size_t>(b * plane + p)] - static_cast<double>(x[(b * c + t) * plane + p]));
      den += w;
    }
  }
  const double loss = den > 0 ? num / den : 0.0;
  const bool needs = detail::needs_grad<Scalar>({&logits});
  Var<Scalar> out = scalar_output<Scalar>(loss, needs);
  if (!needs || den <= 0) return out;
  Node<Scalar>* self = out.node();
  auto xn = logits.node_ptr();
  self->backward = [self, xn, targets, class_weights, lse = std::move(lse), n, c, plane, den]() {
    const double scale = static_cast<double>(self->grad[0]) / den;
    const Scalar* x = xn->value().data();
    Scalar* gx = xn->grad_buffer().data();
    for (Index b = 0; b < n; ++b) {
      for (Index p = 0; p < plane; ++p) {
        const std::size_t pix = static_cast<std::size_t>(b * plane + p);
        const std::int32_t t = targets[pix];
        const double w = class_weights[static_cast<std::size_t>(t)] * scale;
        if (w == 0.0) continue;
        const double l = lse[pix];
        for (Index ch = 0; ch < c; ++ch) {
          const Index i = (b * c + ch) * plane + p;
          const double prob = std::exp(static_cast<double>(x[i]) - l);
          gx[i] += static_cast<Scalar>(w * (prob - (ch == t ? 1.0 : 0.0)));
        }
      }
    }
  };
  return out;
}

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<std::int32_t>& targets) {
  if (logits.shape().rank() != 2) throw DimensionError("cross_entropy: logits must be [N,K], got " + logits.shape().str());
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(targets.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch axis (0) extent " +
                         std::to_string(n));
  }
  const Scalar* x = logits.value().data();
  std::vector<double> lse(static_cast<std::size_t>(n));
  double total = 0;
  for (Index b = 0; b < n; ++b) {
    const std::int32_t t = targets[static_cast<std::size_t>(b)];
    if (t < 0 || t >= k) {
      throw DataError("cross_entropy: target " + std::to_string(t) + " of row " + std::to_string(b) + " outside [0," +
                      std::to_string(k) + ")");
    }
    double m = x[b * k];
    for (Index j = 1; j < k; ++j) m = std::max(m, static_cast<double>(x[b * k + j]));
    double s = 0;
    for (Index j = 0; j < k; ++j) s += std::exp(static_cast<double>(x[b * k + j]) - m);
    lse[static_cast<std::size_t>(b)] = m + std::log(s);
    total += lse[static_cast<std::size_t>(b)] - static_cast<double>(x[b * k + t]);
  }
  const bool needs = detail::needs_grad<Scalar>({&logits});
  Var<Scalar> out = scalar_output<Scalar>(total / static_cast<double>(n), needs);
  if (!needs) return out;
  Node<Scalar>* self = out.node();
  auto xn = logits.node_ptr();
  self->backward = [self, xn, targets, lse = std::move(lse), n, k]() {
    const double scale = static_cast<double>(self->grad[0]) / static_cast<double>(n);
    const Scalar* x = xn->value().data();
    Scalar* gx = xn->grad_buffer().data();
    for (Index b = 0; b < n; ++b) {
      const std::int32_t t = targets[static_cast<std::size_t>(b)];
      for (Index j = 0; j < k; ++j) {
        const double prob = std::exp(static_cast<double>(x[b * k + j]) - lse[static_cast<std::size_t>(b)]);
        gx[b * k + j] += static_cast<Scalar>(scale * (prob - (j == t ? 1.0 : 0.0)));
      }
    }
  };
  return out;
}

template <typename Scalar>
Var<Scalar> mse_loss(const Var<Scalar>& pred, const std::vector<double>& targets) {
  const Index n = pred.value().numel();
  if (static_cast<Index>(targets.size()) != n) {
    throw DimensionError("mse_loss: " + std::to_string(targets.size()) + " targets for prediction " + pred.shape().str());
  }
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double e = static_cast<double>(pred.value()[i]) - targets[static_cast<std::size_t>(i)];
    total += e * e;
  }
  const bool needs = detail::needs_grad<Scalar>({&pred});
  Var<Scalar> out = scalar_output<Scalar>(total / static_cast<double>(n), needs);
  if (!needs) return out;
  Node<Scalar>* self = out.node();
  auto pn = pred.node_ptr();
  self->backward = [self, pn, targets, n]() {
    const double scale = 2.0 * static_cast<double>(self->grad[0]) / static_cast<double>(n);
    Tensor<Scalar>& g = pn->grad_buffer();
    for (Index i = 0; i < n; ++i) {
      g[i] += static_cast<Scalar>(scale * (static_cast<double>(pn->value()[i]) - targets[static_cast<std::size_t>(i)]));
    }
  };
  return out;
}

#define WEEDSENSE_INSTANTIATE(S)                                                                        \
  template Var<S> sum(const Var<S>&);                                                                   \
  template Var<S> masked_sum(const Var<S>&, const Tensor<S>&);                                          \
  template Var<S> weighted_sum(const std::vector<Var<S>>&, const std::vector<double>&);                 \
  template Var<S> weighted_cross_entropy_2d(const Var<S>&, const std::vector<std::int32_t>&,             \
                                            const std::vector<double>&);                                \
  template Var<S> cross_entropy(const Var<S>&, const std::vector<std::int32_t>&);                       \
  template Var<S> mse_loss(const Var<S>&, const std::vector<double>&);

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
