#pragma once

#include "weedsense/model/model.hpp"

namespace weedsense {

template <typename Scalar>
struct GradCamResult {
  Tensor<Scalar> map;       // [1,1,H/8,W/8], min-max normalized to [0,1]
  bool degenerate = false;  // the raw map had no positive spread; `map` is all zeros
  double target = 0;        // value of the differentiated task scalar
};

/// Grad-CAM on the aggregated features for one task. Targets: seg sums the
/// logit of the dominant predicted class over the pixels predicting it;
/// height uses the prediction itself; week uses the arg-max week logit.
template <typename Scalar>
GradCamResult<Scalar> grad_cam(const WeedSenseModel<Scalar>& model, const Tensor<Scalar>& image, Task task);

}  // namespace weedsense
