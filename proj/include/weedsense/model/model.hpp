#pragma once

#include <map>
#include <memory>
#include <vector>

#include "weedsense/model/config.hpp"

namespace weedsense {

template <typename Scalar>
struct ForwardOutput {
  Var<Scalar> seg;                // [N,classes,H,W] when seg is a task
  Var<Scalar> height;             // [N,1] when height is a task
  Var<Scalar> week;               // [N,weeks] when week is a task
  std::vector<Var<Scalar>> aux;   // 4 maps [N,classes,H,W] in train mode with aux heads
  Var<Scalar> aggregated;         // shared H/8 representation
};

template <typename Scalar>
class WeedSenseModel {
 public:
  WeedSenseModel(const ModelConfig& config, std::uint64_t seed);

  WeedSenseModel(WeedSenseModel&&) noexcept = default;
  WeedSenseModel& operator=(WeedSenseModel&&) noexcept = default;

  /// `dropout_seed` selects the seg-head dropout mask in train mode.
  ForwardOutput<Scalar> forward(const Var<Scalar>& image, Mode mode, std::uint64_t dropout_seed = 0) const;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParameterStore<Scalar>& parameters() { return *store_; }
  const ParameterStore<Scalar>& parameters() const { return *store_; }

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::unique_ptr<ParameterStore<Scalar>> store_;
  DetailBranch<Scalar> detail_;
  SemanticBranch<Scalar> semantic_;
  Aggregation<Scalar> aggregation_;
  std::vector<AuxHead<Scalar>> aux_;
  SegHead<Scalar> seg_head_;
  TemporalGrowthDecoder<Scalar> tgd_;
  TaskHeads<Scalar> task_heads_;
};

template <typename Scalar>
WeedSenseModel<Scalar> build_single_task(const ModelConfig& config, Task task, std::uint64_t seed) {
  return WeedSenseModel<Scalar>(single_task_config(config, task), seed);
}

/// Upsampling factors of the auxiliary heads on stem, S3, S4 and S5.
inline constexpr std::array<int, 4> kAuxFactors{4, 8, 16, 32};

/// Analytic parameter and compute totals. FLOPs count one multiply-accumulate
/// as two floating-point operations; MACs are reported alongside.
struct ProfileReport {
  Index total_params = 0;
  std::map<std::string, Index> params_by_module;
  Index input_h = 0, input_w = 0;
  Index total_macs = 0;
  Index total_flops = 0;
  std::map<std::string, Index> flops_by_module;
  std::string convention = "2xMAC";

  nlohmann::json to_json() const;
};

/// Parameter totals by module; no tensors are allocated. Aux heads are counted.
ProfileReport count_parameters(const ModelConfig& config);
/// Inference-mode compute at `h` x `w` for batch 1; aux heads are excluded.
ProfileReport count_flops(const ModelConfig& config, Index h, Index w);
/// Both of the above in one report.
ProfileReport profile(const ModelConfig& config, Index h, Index w);

}  // namespace weedsense
