#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "weedsense/decoder/decoder.hpp"
#include "weedsense/encoder/encoder.hpp"

namespace weedsense {

enum class SizeVariant { kSmall, kMedium, kLarge };
enum class Task { kSeg, kHeight, kWeek };

std::string to_string(SizeVariant size);
std::string to_string(Task task);
SizeVariant parse_size(const std::string& text);
Task parse_task(const std::string& text);

struct TaskSet {
  bool seg = true;
  bool height = true;
  bool week = true;

  static TaskSet only(Task task);
  /// Comma-separated list, e.g. "seg,height".
  static TaskSet parse(const std::string& text);
  std::string str() const;
  bool contains(Task task) const;
  bool any() const { return seg || height || week; }
  bool decoder_needed() const { return height || week; }
};

/// Complete architecture description. Every width is explicit so the same
/// struct serves the published size variants and scaled-down test models.
struct ModelConfig {
  SizeVariant size = SizeVariant::kMedium;
  BranchSpec branch;
  KernelConfig kernel;
  bool use_se = true;
  double layer_scale_init = 1e-5;
  Index agg_channels = 128;
  Index seg_mid_channels = 128;
  double seg_dropout = 0.1;
  Index embed_dim = 512;
  int heads = 8;
  Index ffn_dim = 2048;
  std::array<Index, 2> head_hidden{1024, 512};
  bool aux_enabled = true;
  Index num_classes = 17;
  Index num_weeks = 11;
  TaskSet tasks;

  /// Published size variant with all other settings at their defaults.
  static ModelConfig preset(SizeVariant size);
  /// Medium with every channel width divided by 8, for gradient checks.
  static ModelConfig tiny();

  bool has_aux() const { return aux_enabled && tasks.seg; }
  SegHeadSpec seg_spec() const;
  TGDSpec tgd_spec() const;

  /// Throws ConfigError naming the offending field or stage.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep the values of `base` (the Medium preset if omitted).
  static ModelConfig from_json(const nlohmann::json& j, const ModelConfig& base);
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Config of the dedicated single-task model for `task`: segmentation keeps
/// the encoder, seg head and aux heads; height and week keep the encoder and
/// the temporal decoder with one head.
ModelConfig single_task_config(const ModelConfig& config, Task task);

}  // namespace weedsense
