#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "weedsense/core/tensor.hpp"

namespace weedsense {

/// Lowest index among the maxima.
Index argmax(const float* values, Index n);

struct SegMetrics {
  double miou = 0;
  double mf1 = 0;
  double pixel_accuracy = 0;
  std::vector<double> per_class_iou;  // 0 for classes absent from gt and pred
  std::vector<bool> present;          // class occurs in gt or pred

  nlohmann::json to_json() const;
};

/// Dataset-level confusion matrix; rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(int gt, int pred);
  /// Arg-max of logits [N,K,H,W] against gt labels (N*H*W).
  void add_logits(const TensorF& logits, const std::vector<std::int32_t>& gt);
  std::int64_t at(int gt, int pred) const;
  int num_classes() const { return k_; }
  /// IoU and F1 means run over classes present in gt or pred.
  SegMetrics summarize() const;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

SegMetrics evaluate_segmentation(const TensorF& logits, const std::vector<std::int32_t>& gt, int num_classes = 17);

struct RegressionMetrics {
  double mae_cm = 0;
  double rmse_cm = 0;
  double r2 = 0;
  bool r2_defined = true;  // false when gt has zero variance; r2 is then NaN
  double max_error_cm = 0;
  double within_1cm = 0;
  double within_2cm = 0;
  double within_5cm = 0;

  nlohmann::json to_json() const;
};

/// Tolerances are inclusive: |error| <= tau.
RegressionMetrics evaluate_regression(const std::vector<double>& pred, const std::vector<double>& gt);

struct ClassificationMetrics {
  double accuracy = 0;
  double macro_f1 = 0;

  nlohmann::json to_json() const;
};

/// Macro-F1 averages over classes present in gt.
ClassificationMetrics evaluate_classification(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes);
/// Arg-max of logits [N,K] (ties to the lowest index).
ClassificationMetrics evaluate_classification(const TensorF& logits, const std::vector<int>& gt);

struct MetricsReport {
  std::optional<SegMetrics> seg;
  std::optional<RegressionMetrics> height;
  std::optional<ClassificationMetrics> week;
  Index samples = 0;

  nlohmann::json to_json() const;
};

}  // namespace weedsense
