#include "weedsense/train/loss.hpp"

#include <cmath>

namespace weedsense {

Batch make_batch(const std::vector<const Sample*>& samples, const Normalization& norm) {
  if (samples.empty()) throw DataError("cannot build an empty batch");
  const Index h = samples[0]->height(), w = samples[0]->width(), n = static_cast<Index>(samples.size());
  Batch b;
  TensorF raw({n, 3, h, w});
  const Index per = 3 * h * w;
  for (Index i = 0; i < n; ++i) {
    const Sample& s = *samples[static_cast<std::size_t>(i)];
    if (s.height() != h || s.width() != w) {
      throw DimensionError("sample '" + s.id + "' is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                           ", batch is " + std::to_string(h) + "x" + std::to_string(w));
    }
    std::copy(s.image.data(), s.image.data() + per, raw.data() + i * per);
    b.ids.push_back(s.id);
    b.mask.insert(b.mask.end(), s.mask.begin(), s.mask.end());
    b.height_cm.push_back(s.height_cm);
    b.week.push_back(s.week);
  }
  b.image = normalize_image(raw, norm);
  return b;
}

nlohmann::json LossWeights::to_json() const {
  return {{"seg", seg}, {"height", height}, {"week", week}, {"aux", aux}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  if (j.contains("seg")) w.seg = j.at("seg").get<double>();
  if (j.contains("height")) w.height = j.at("height").get<double>();
  if (j.contains("week")) w.week = j.at("week").get<double>();
  if (j.contains("aux")) w.aux = j.at("aux").get<double>();
  return w;
}

template <typename Scalar>
LossBreakdown<Scalar> multi_task_loss(const ForwardOutput<Scalar>& out, const Batch& batch,
                                      const std::vector<double>& class_weights, const LossWeights& w) {
  const Index n = batch.size();
  std::vector<Var<Scalar>> terms;
  std::vector<double> coeffs;
  LossBreakdown<Scalar> r;

  if (out.seg.defined()) {
    const Index classes = out.seg.dim(1);
    if (out.seg.dim(0) != n || static_cast<Index>(batch.mask.size()) != out.seg.value().numel() / classes) {
      throw DimensionError("seg logits " + out.seg.shape().str() + " do not match the batch masks");
    }
    if (static_cast<Index>(class_weights.size()) != classes) {
      throw DimensionError("expected " + std::to_string(classes) + " class weights, got " +
                           std::to_string(class_weights.size()));
    }
    const Index plane = static_cast<Index>(batch.mask.size()) / n;
    for (std::size_t p = 0; p < batch.mask.size(); ++p) {
      const std::int32_t label = batch.mask[p];
      if (label < 0 || label >= classes) {
        throw DataError("sample '" + batch.ids[p / static_cast<std::size_t>(plane)] + "': mask label " +
                        std::to_string(label) + " outside 0.." + std::to_string(classes - 1));
      }
    }
    Var<Scalar> seg = weighted_cross_entropy_2d(out.seg, batch.mask, class_weights);
    r.seg = static_cast<double>(seg.value()[0]);
    terms.push_back(seg);
    coeffs.push_back(w.seg);
    for (const Var<Scalar>& a : out.aux) {
      Var<Scalar> t = weighted_cross_entropy_2d(a, batch.mask, class_weights);
      r.aux += static_cast<double>(t.value()[0]);
      terms.push_back(t);
      coeffs.push_back(w.aux);
    }
  }
  if (out.height.defined()) {
    for (Index i = 0; i < n; ++i) {
      const double h = batch.height_cm[static_cast<std::size_t>(i)];
      if (!(h >= 0) || !std::isfinite(h)) {
        throw DataError("sample '" + batch.ids[static_cast<std::size_t>(i)] + "': height " + std::to_string(h) +
                        " is not a non-negative number");
      }
    }
    Var<Scalar> t = mse_loss(out.height, batch.height_cm);
    r.height = static_cast<double>(t.value()[0]);
    terms.push_back(t);
    coeffs.push_back(w.height);
  }
  if (out.week.defined()) {
    const Index weeks = out.week.dim(1);
    std::vector<std::int32_t> cls;
    for (Index i = 0; i < n; ++i) {
      const int week = batch.week[static_cast<std::size_t>(i)];
      if (week < 1 || week > weeks) {
        throw DataError("sample '" + batch.ids[static_cast<std::size_t>(i)] + "': week " + std::to_string(week) +
                        " outside 1.." + std::to_string(weeks));
      }
      cls.push_back(week - 1);
    }
    Var<Scalar> t = cross_entropy(out.week, cls);
    r.week = static_cast<double>(t.value()[0]);
    terms.push_back(t);
    coeffs.push_back(w.week);
  }
  if (terms.empty()) throw ConfigError("model output carries no task to train");
  r.loss = weighted_sum(terms, coeffs);
  r.total = static_cast<double>(r.loss.value()[0]);
  return r;
}

template LossBreakdown<float> multi_task_loss(const ForwardOutput<float>&, const Batch&, const std::vector<double>&,
                                              const LossWeights&);
template LossBreakdown<double> multi_task_loss(const ForwardOutput<double>&, const Batch&, const std::vector<double>&,
                                               const LossWeights&);

}  // namespace weedsense
