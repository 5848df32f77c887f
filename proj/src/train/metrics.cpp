#include "weedsense/train/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace weedsense {

Index argmax(const float* values, Index n) {
  Index best = 0;
  for (Index i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json SegMetrics::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) per.push_back(present[c] ? nlohmann::json(per_class_iou[c]) : nlohmann::json(nullptr));
  return {{"miou", miou}, {"mf1", mf1}, {"pixel_accuracy", pixel_accuracy}, {"per_class_iou", per}};
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(int gt, int pred) {
  if (gt < 0 || gt >= k_) throw DataError("ground-truth label " + std::to_string(gt) + " outside 0.." + std::to_string(k_ - 1));
  if (pred < 0 || pred >= k_) throw DataError("predicted label " + std::to_string(pred) + " out of range");
  ++counts_[static_cast<std::size_t>(gt * k_ + pred)];
}

void ConfusionMatrix::add_logits(const TensorF& logits, const std::vector<std::int32_t>& gt) {
  if (logits.rank() != 4 || logits.dim(1) != k_) {
    throw DimensionError("expected logits [N," + std::to_string(k_) + ",H,W], got " + logits.shape().str());
  }
  const Index n = logits.dim(0), plane = logits.dim(2) * logits.dim(3);
  if (static_cast<Index>(gt.size()) != n * plane) throw DimensionError("label count does not match logits " + logits.shape().str());
  std::vector<float> column(static_cast<std::size_t>(k_));
  for (Index b = 0; b < n; ++b)
    for (Index p = 0; p < plane; ++p) {
      for (Index c = 0; c < k_; ++c) column[static_cast<std::size_t>(c)] = logits[(b * k_ + c) * plane + p];
      add(gt[static_cast<std::size_t>(b * plane + p)], static_cast<int>(argmax(column.data(), k_)));
    }
}

std::int64_t ConfusionMatrix::at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * k_ + pred)]; }

SegMetrics ConfusionMatrix::summarize() const {
  SegMetrics m;
  m.per_class_iou.assign(static_cast<std::size_t>(k_), 0.0);
  m.present.assign(static_cast<std::size_t>(k_), false);
  std::int64_t total = 0, correct = 0;
  int present = 0;
  double iou_sum = 0, f1_sum = 0;
  for (int c = 0; c < k_; ++c) {
    std::int64_t row = 0, col = 0;
    for (int o = 0; o < k_; ++o) {
      row += at(c, o);
      col += at(o, c);
    }
    const std::int64_t tp = at(c, c), fn = row - tp, fp = col - tp;
    total += row;
    correct += tp;
    if (row == 0 && col == 0) continue;
    m.present[static_cast<std::size_t>(c)] = true;
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    m.per_class_iou[static_cast<std::size_t>(c)] = iou;
    iou_sum += iou;
    f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++present;
  }
  if (present > 0) {
    m.miou = iou_sum / present;
    m.mf1 = f1_sum / present;
  }
  m.pixel_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return m;
}

SegMetrics evaluate_segmentation(const TensorF& logits, const std::vector<std::int32_t>& gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add_logits(logits, gt);
  return cm.summarize();
}

nlohmann::json RegressionMetrics::to_json() const {
  return {{"mae_cm", mae_cm},           {"rmse_cm", rmse_cm},         {"r2", number_or_null(r2)},
          {"r2_defined", r2_defined},   {"max_error_cm", max_error_cm}, {"within_1cm", within_1cm},
          {"within_2cm", within_2cm},   {"within_5cm", within_5cm}};
}

RegressionMetrics evaluate_regression(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw DimensionError("prediction and ground-truth counts differ");
  if (gt.size() < 2) throw DimensionError("regression metrics need at least 2 samples");
  const auto n = static_cast<double>(gt.size());
  RegressionMetrics r;
  double abs_sum = 0, sq_sum = 0, mean = 0;
  int w1 = 0, w2 = 0, w5 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double e = std::abs(pred[i] - gt[i]);
    abs_sum += e;
    sq_sum += e * e;
    r.max_error_cm = std::max(r.max_error_cm, e);
    w1 += e <= 1.0;
    w2 += e <= 2.0;
    w5 += e <= 5.0;
    mean += gt[i];
  }
  mean /= n;
  double var = 0;
  for (double g : gt) var += (g - mean) * (g - mean);
  r.mae_cm = abs_sum / n;
  r.rmse_cm = std::sqrt(sq_sum / n);
  r.within_1cm = w1 / n;
  r.within_2cm = w2 / n;
  r.within_5cm = w5 / n;
  if (var > 0) {
    r.r2 = 1.0 - sq_sum / var;
  } else {
    r.r2 = std::numeric_limits<double>::quiet_NaN();
    r.r2_defined = false;
  }
  return r;
}

nlohmann::json ClassificationMetrics::to_json() const { return {{"accuracy", accuracy}, {"macro_f1", macro_f1}}; }

ClassificationMetrics evaluate_classification(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes) {
  if (pred.size() != gt.size() || gt.empty()) throw DimensionError("classification needs equal, non-empty label lists");
  std::vector<std::int64_t> tp(static_cast<std::size_t>(num_classes), 0), fp = tp, fn = tp;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i], p = pred[i];
    if (g < 0 || g >= num_classes) throw DataError("class label " + std::to_string(g) + " outside 0.." + std::to_string(num_classes - 1));
    if (p < 0 || p >= num_classes) throw DataError("predicted class " + std::to_string(p) + " out of range");
    if (g == p) {
      ++correct;
      ++tp[static_cast<std::size_t>(g)];
    } else {
      ++fn[static_cast<std::size_t>(g)];
      ++fp[static_cast<std::size_t>(p)];
    }
  }
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(gt.size());
  int present = 0;
  double f1 = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    if (tp[k] + fn[k] == 0) continue;
    f1 += 2.0 * static_cast<double>(tp[k]) / static_cast<double>(2 * tp[k] + fp[k] + fn[k]);
    ++present;
  }
  m.macro_f1 = f1 / present;
  return m;
}

ClassificationMetrics evaluate_classification(const TensorF& logits, const std::vector<int>& gt) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(gt.size())) {
    throw DimensionError("expected logits [N,K] matching " + std::to_string(gt.size()) + " labels, got " +
                         logits.shape().str());
  }
  const Index k = logits.dim(1);
  std::vector<int> pred;
  for (Index i = 0; i < logits.dim(0); ++i) pred.push_back(static_cast<int>(argmax(logits.data() + i * k, k)));
  return evaluate_classification(pred, gt, static_cast<int>(k));
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j{{"samples", samples}};
  j["seg"] = seg ? seg->to_json() : nlohmann::json(nullptr);
  j["height"] = height ? height->to_json() : nlohmann::json(nullptr);
  j["week"] = week ? week->to_json() : nlohmann::json(nullptr);
  return j;
}

}  // namespace weedsense
