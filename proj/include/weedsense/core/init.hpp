#pragma once

#include <cmath>
#include <cstdint>

#include "weedsense/core/random.hpp"
#include "weedsense/core/tensor.hpp"

namespace weedsense {

/// Uniform(-bound, bound) draws. Values are drawn in double and then cast, so
/// float and double builds from one seed agree to rounding.
template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double bound, std::uint64_t seed) {
  Tensor<Scalar> t(std::move(shape));
  Rng rng(seed);
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  return t;
}

/// Kaiming-uniform for ReLU networks: bound = sqrt(6 / fan_in).
template <typename Scalar>
Tensor<Scalar> kaiming_uniform(Shape shape, Index fan_in, std::uint64_t seed) {
  return uniform_tensor<Scalar>(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), seed);
}

template <typename Scalar>
Tensor<Scalar> xavier_uniform(Shape shape, Index fan_in, Index fan_out, std::uint64_t seed) {
  return uniform_tensor<Scalar>(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), seed);
}

}  // namespace weedsense
