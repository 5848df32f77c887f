#include "weedsense/train/optim.hpp"

#include <cmath>
#include <numbers>

namespace weedsense {

void ScheduleSpec::validate() const {
  if (!(base_lr > 0)) throw ConfigError("base learning rate must be positive");
  if (!(min_lr >= 0) || min_lr > base_lr) throw ConfigError("min_lr must lie in [0, base_lr]");
  if (warmup_iters < 0 || total_iters < 0) throw ConfigError("iteration counts must be non-negative");
  if (!(warmup_start_factor >= 0 && warmup_start_factor <= 1)) {
    throw ConfigError("warmup start factor must lie in [0,1]");
  }
}

nlohmann::json ScheduleSpec::to_json() const {
  return {{"base_lr", base_lr},
          {"warmup_iters", warmup_iters},
          {"total_iters", total_iters},
          {"min_lr", min_lr},
          {"warmup_start_factor", warmup_start_factor}};
}

double lr_at(const ScheduleSpec& s, Index iter) {
  if (iter < s.warmup_iters) {
    const double t = static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
    return s.base_lr * (s.warmup_start_factor + (1.0 - s.warmup_start_factor) * t);
  }
  const Index span = s.total_iters - s.warmup_iters;
  if (span <= 0) return s.base_lr;
  const double t = std::min(1.0, static_cast<double>(iter - s.warmup_iters) / static_cast<double>(span));
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

nlohmann::json AdamWConfig::to_json() const {
  return {{"beta1", beta1}, {"beta2", beta2}, {"eps", eps}, {"weight_decay", weight_decay}};
}

template <typename Scalar>
AdamW<Scalar>::AdamW(ParameterStore<Scalar>& store, AdamWConfig config) : store_(&store), config_(config) {
  for (Parameter<Scalar>* p : store.trainable()) {
    moments_[p->name] = {Tensor<Scalar>::zeros_like(p->value), Tensor<Scalar>::zeros_like(p->value)};
  }
}

template <typename Scalar>
void AdamW<Scalar>::step(double lr) {
  const auto params = store_->trainable();
  for (const Parameter<Scalar>* p : params) {
    if (!p->grad.empty() && !p->grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (Parameter<Scalar>* p : params) {
    Moments& st = moments_.at(p->name);
    Scalar* x = p->value.data();
    Scalar* m = st.m.data();
    Scalar* v = st.v.data();
    const Scalar* g = p->grad.empty() ? nullptr : p->grad.data();
    for (Index i = 0; i < p->value.numel(); ++i) {
      const double gi = g ? static_cast<double>(g[i]) : 0.0;
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<Scalar>(mi);
      v[i] = static_cast<Scalar>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      x[i] = static_cast<Scalar>(static_cast<double>(x[i]) * decay - lr * update);
    }
  }
}

template <typename Scalar>
void AdamW<Scalar>::restore(std::int64_t steps, std::map<std::string, Moments> moments) {
  for (const auto& [name, st] : moments_) {
    auto it = moments.find(name);
    if (it == moments.end()) throw ConfigError("optimizer state lacks moments for '" + name + "'");
    st.m.require_same_shape(it->second.m, name.c_str());
    st.v.require_same_shape(it->second.v, name.c_str());
  }
  steps_ = steps;
  moments_ = std::move(moments);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace weedsense
