#pragma once

#include <string>
#include <vector>

#include "weedsense/data/dataset.hpp"
#include "weedsense/model/model.hpp"

namespace weedsense {

/// Network-ready batch: normalized images plus the labels of each sample.
struct Batch {
  std::vector<std::string> ids;
  TensorF image;                    // [N,3,H,W]
  std::vector<std::int32_t> mask;   // N*H*W class indices
  std::vector<double> height_cm;
  std::vector<int> week;            // 1..11

  Index size() const { return static_cast<Index>(ids.size()); }
};

/// Stacks samples of equal extent and normalizes their images.
Batch make_batch(const std::vector<const Sample*>& samples, const Normalization& norm);

struct LossWeights {
  double seg = 1.0;
  double height = 1.0;
  double week = 1.0;
  double aux = 1.0;  // applied to each of the four aux heads

  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

/// Unweighted term values; `aux` is the sum over the aux heads. `total` is the
/// weighted sum of the terms and `loss` is the differentiable version of it.
template <typename Scalar>
struct LossBreakdown {
  Var<Scalar> loss;
  double total = 0;
  double seg = 0;
  double aux = 0;
  double height = 0;
  double week = 0;
};

/// Weighted cross-entropy on seg and aux maps, MSE on raw centimeters and
/// cross-entropy on weeks (week k is class k-1). Terms whose outputs are
/// absent contribute nothing. Out-of-range labels raise DataError naming the
/// sample.
template <typename Scalar>
LossBreakdown<Scalar> multi_task_loss(const ForwardOutput<Scalar>& out, const Batch& batch,
                                      const std::vector<double>& class_weights, const LossWeights& weights);

}  // namespace weedsense
