#pragma once

#include <filesystem>
#include <functional>
#include <ostream>

#include "weedsense/core/gradcheck.hpp"
#include "weedsense/train/augment.hpp"
#include "weedsense/train/loss.hpp"
#include "weedsense/train/metrics.hpp"
#include "weedsense/train/optim.hpp"

namespace weedsense {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  /// total_iters is derived as epochs * ceil(N / batch_size).
  ScheduleSpec schedule;
  LossWeights weights;
  AdamWConfig adam;
  bool augment = true;
  AugConfig aug;
  Normalization norm;
  bool uniform_class_weights = false;
  std::uint64_t seed = 0;
  /// Stop once this many iterations have run in total (-1: run to the end).
  Index stop_after = -1;

  nlohmann::json to_json() const;
};

struct LogRow {
  Index iter = 0;
  double lr = 0;
  double total = 0;
  double seg = 0;
  double aux = 0;
  double height = 0;
  double week = 0;
};

inline constexpr const char* kLogHeader = "iter,lr,loss_total,loss_seg,loss_aux,loss_height,loss_week";
void write_log_csv(std::ostream& out, const std::vector<LogRow>& rows);

/// Parameters, optimizer moments and position of a training run.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t model_seed = 0;
  Index iteration = 0;
  std::int64_t adam_steps = 0;
  nlohmann::json train_config;
  std::map<std::string, TensorF> params;
  std::map<std::string, AdamW<float>::Moments> moments;

  static Checkpoint capture(const WeedSenseModel<float>& model, const AdamW<float>* optimizer, Index iteration);
  /// Rebuilds the model described by the checkpoint and loads its values.
  WeedSenseModel<float> make_model() const;
  void apply(WeedSenseModel<float>& model) const;

  /// Binary container: "WSNSCKPT", format version, JSON header, raw float32.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct TrainResult {
  std::vector<LogRow> log;
  Checkpoint checkpoint;
  std::vector<double> class_weights;
};

/// Deterministic given cfg.seed: epoch orders, augmentation and dropout draw
/// from seeds derived from it. With `resume`, model and optimizer state are
/// restored and training continues at the checkpoint iteration.
TrainResult train(WeedSenseModel<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const Checkpoint* resume = nullptr, const std::function<void(const LogRow&)>& on_iter = {});

/// Eval-mode metrics at batch 1 over every task the model has.
MetricsReport evaluate(const WeedSenseModel<float>& model, const std::vector<Sample>& data, const Normalization& norm);

struct ModelGradCheckOptions {
  std::uint64_t seed = 0;
  Index input_size = 64;
  Index batch = 2;
  Index samples_per_tensor = 3;
  double step = 1e-7;
  double floor = 1e-3;
};

/// Finite-difference check of the full multi-task loss (seg, aux, height and
/// week terms) through a tiny double-precision model in train mode.
GradCheckReport model_gradient_check(const ModelGradCheckOptions& options = {});

}  // namespace weedsense
