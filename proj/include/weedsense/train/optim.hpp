#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "weedsense/core/autograd.hpp"

namespace weedsense {

/// Linear warmup from warmup_start_factor * base_lr to base_lr, then cosine
/// annealing to min_lr at total_iters.
struct ScheduleSpec {
  double base_lr = 2e-4;
  Index warmup_iters = 1500;
  Index total_iters = 0;
  double min_lr = 0.0;
  double warmup_start_factor = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
};

double lr_at(const ScheduleSpec& spec, Index iter);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  nlohmann::json to_json() const;
};

/// Adam with bias correction and decoupled weight decay p <- p * (1 - lr * wd).
/// Reads Parameter::grad of every trainable parameter; a missing gradient
/// counts as zero.
template <typename Scalar>
class AdamW {
 public:
  struct Moments {
    Tensor<Scalar> m;
    Tensor<Scalar> v;
  };

  AdamW(ParameterStore<Scalar>& store, AdamWConfig config = {});

  /// Throws NumericError naming the first parameter with a non-finite
  /// gradient; no parameter is modified in that case.
  void step(double lr);

  std::int64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  /// Restores state captured from another optimizer over the same parameters.
  void restore(std::int64_t steps, std::map<std::string, Moments> moments);

 private:
  ParameterStore<Scalar>* store_;
  AdamWConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace weedsense
