#include "weedsense/model/gradcam.hpp"

#include <algorithm>
#include <cmath>

namespace weedsense {
namespace {

// Mask selecting the dominant predicted class at the pixels that predict it.
// Background (class 0) is only chosen when nothing else is predicted.
template <typename Scalar>
Tensor<Scalar> seg_target_mask(const Tensor<Scalar>& logits) {
  const Index k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  std::vector<Index> arg(static_cast<std::size_t>(h * w));
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      Index best = 0;
      for (Index c = 1; c < k; ++c)
        if (logits.at(0, c, y, x) > logits.at(0, best, y, x)) best = c;
      arg[static_cast<std::size_t>(y * w + x)] = best;
      ++counts[static_cast<std::size_t>(best)];
    }
  Index cls = 0;
  for (Index c = 1; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0 &&
        (cls == 0 || counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(cls)]))
      cls = c;
  Tensor<Scalar> mask(logits.shape());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      if (arg[static_cast<std::size_t>(y * w + x)] == cls) mask.at(0, cls, y, x) = Scalar(1);
  return mask;
}

}  // namespace

template <typename Scalar>
GradCamResult<Scalar> grad_cam(const WeedSenseModel<Scalar>& model, const Tensor<Scalar>& image, Task task) {
  if (image.rank() != 4 || image.dim(0) != 1) throw DimensionError("grad-cam expects one image [1,3,H,W]");
  if (!model.config().tasks.contains(task)) {
    throw ConfigError("grad-cam: model was built without the " + to_string(task) + " task");
  }
  Tape<Scalar> tape;
  ForwardOutput<Scalar> out = model.forward(Var<Scalar>::constant(image), Mode::kEval);
  Var<Scalar> target;
  switch (task) {
    case Task::kSeg:
      target = masked_sum(out.seg, seg_target_mask(out.seg.value()));
      break;
    case Task::kHeight:
      target = sum(out.height);
      break;
    case Task::kWeek: {
      const Tensor<Scalar>& w = out.week.value();
      Index best = 0;
      for (Index k = 1; k < w.numel(); ++k)
        if (w[k] > w[best]) best = k;
      Tensor<Scalar> mask(w.shape());
      mask[best] = Scalar(1);
      target = masked_sum(out.week, mask);
      break;
    }
  }
  tape.backward(target);

  const Tensor<Scalar>& a = out.aggregated.value();
  const Tensor<Scalar> g = out.aggregated.grad();
  const Index c = a.dim(1), h = a.dim(2), w = a.dim(3), hw = h * w;
  GradCamResult<Scalar> r;
  r.target = static_cast<double>(target.value()[0]);
  std::vector<double> cam(static_cast<std::size_t>(hw), 0.0);
  for (Index ch = 0; ch < c; ++ch) {
    double alpha = 0;
    for (Index p = 0; p < hw; ++p) alpha += static_cast<double>(g.data()[ch * hw + p]);
    alpha /= static_cast<double>(hw);
    for (Index p = 0; p < hw; ++p) cam[static_cast<std::size_t>(p)] += alpha * static_cast<double>(a.data()[ch * hw + p]);
  }
  for (double& v : cam) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(cam.begin(), cam.end());
  const double min = *lo, spread = *hi - *lo;
  r.map = Tensor<Scalar>({1, 1, h, w});
  if (!(spread > 0.0) || !std::isfinite(spread)) {
    r.degenerate = true;
    return r;
  }
  for (Index p = 0; p < hw; ++p) {
    r.map.data()[p] = static_cast<Scalar>(std::clamp((cam[static_cast<std::size_t>(p)] - min) / spread, 0.0, 1.0));
  }
  return r;
}

template GradCamResult<float> grad_cam(const WeedSenseModel<float>&, const Tensor<float>&, Task);
template GradCamResult<double> grad_cam(const WeedSenseModel<double>&, const Tensor<double>&, Task);

}  // namespace weedsense
