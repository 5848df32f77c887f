#include "weedsense/core/layers.hpp"

#include "weedsense/core/init.hpp"

namespace weedsense {

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const LayerScope<Scalar>& scope, Index in_channels, Index out_channels, int kernel,
                       int stride, int groups, bool bias)
    : opts_{stride, kernel / 2, groups}, in_(in_channels), out_(out_channels), kernel_(kernel) {
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError(scope.prefix + ": channels " + std::to_string(in_channels) + "->" +
                      std::to_string(out_channels) + " not divisible by groups " + std::to_string(groups));
  }
  const Index fan_in = in_channels / groups * kernel * kernel;
  weight_ = &scope.store->add(scope.path("weight"),
                              kaiming_uniform<Scalar>({out_channels, in_channels / groups, kernel, kernel}, fan_in,
                                                      scope.seed_for("weight")));
  if (bias) bias_ = &scope.store->add(scope.path("bias"), Tensor<Scalar>::zeros({out_channels}));
}

template <typename Scalar>
Var<Scalar> Conv2d<Scalar>::operator()(const Var<Scalar>& x) const {
  return conv2d(x, param_var(*weight_), maybe_param(bias_), opts_);
}

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(const LayerScope<Scalar>& scope, Index channels) {
  ParameterStore<Scalar>& s = *scope.store;
  gamma_ = &s.add(scope.path("gamma"), Tensor<Scalar>::ones({channels}));
  beta_ = &s.add(scope.path("beta"), Tensor<Scalar>::zeros({channels}));
  running_mean_ = &s.add(scope.path("running_mean"), Tensor<Scalar>::zeros({channels}), false);
  running_var_ = &s.add(scope.path("running_var"), Tensor<Scalar>::ones({channels}), false);
}

template <typename Scalar>
Var<Scalar> BatchNorm2d<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  BatchNormState<Scalar> state{&running_mean_->value, &running_var_->value};
  return batch_norm2d(x, param_var(*gamma_), param_var(*beta_), state, mode);
}

template <typename Scalar>
ConvBN<Scalar>::ConvBN(const LayerScope<Scalar>& scope, Index in_channels, Index out_channels, int kernel,
                       int stride, int groups, bool relu)
    : conv_(scope.child("conv"), in_channels, out_channels, kernel, stride, groups, false),
      bn_(scope.child("bn"), out_channels),
      relu_(relu) {}

template <typename Scalar>
Var<Scalar> ConvBN<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const {
  Var<Scalar> y = bn_(conv_(x), mode);
  return relu_ ? relu(y) : y;
}

template <typename Scalar>
Linear<Scalar>::Linear(const LayerScope<Scalar>& scope, Index in_features, Index out_features, bool bias) {
  weight_ = &scope.store->add(scope.path("weight"), kaiming_uniform<Scalar>({out_features, in_features}, in_features,
                                                                            scope.seed_for("weight")));
  if (bias) bias_ = &scope.store->add(scope.path("bias"), Tensor<Scalar>::zeros({out_features}));
}

template <typename Scalar>
Var<Scalar> Linear<Scalar>::operator()(const Var<Scalar>& x) const {
  return linear(x, param_var(*weight_), maybe_param(bias_));
}

template <typename Scalar>
LayerNorm<Scalar>::LayerNorm(const LayerScope<Scalar>& scope, Index dim) {
  gamma_ = &scope.store->add(scope.path("gamma"), Tensor<Scalar>::ones({dim}));
  beta_ = &scope.store->add(scope.path("beta"), Tensor<Scalar>::zeros({dim}));
}

template <typename Scalar>
Var<Scalar> LayerNorm<Scalar>::operator()(const Var<Scalar>& x) const {
  return layer_norm(x, param_var(*gamma_), param_var(*beta_));
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBN<float>;
template class ConvBN<double>;
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;

}  // namespace weedsense
