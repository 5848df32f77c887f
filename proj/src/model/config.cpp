#include "weedsense/model/config.hpp"

#include <sstream>

namespace weedsense {

std::string to_string(SizeVariant size) {
  switch (size) {
    case SizeVariant::kSmall: return "small";
    case SizeVariant::kMedium: return "medium";
    case SizeVariant::kLarge: return "large";
  }
  return "?";
}

std::string to_string(Task task) {
  switch (task) {
    case Task::kSeg: return "seg";
    case Task::kHeight: return "height";
    case Task::kWeek: return "week";
  }
  return "?";
}

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

SizeVariant parse_size(const std::string& text) {
  const std::string s = lower(text);
  if (s == "small" || s == "s") return SizeVariant::kSmall;
  if (s == "medium" || s == "m") return SizeVariant::kMedium;
  if (s == "large" || s == "l") return SizeVariant::kLarge;
  throw ConfigError("unknown size '" + text + "' (expected small, medium or large)");
}

Task parse_task(const std::string& text) {
  const std::string s = lower(text);
  if (s == "seg" || s == "segmentation") return Task::kSeg;
  if (s == "height") return Task::kHeight;
  if (s == "week" || s == "growth") return Task::kWeek;
  throw ConfigError("unknown task '" + text + "' (expected seg, height or week)");
}

TaskSet TaskSet::only(Task task) {
  return {task == Task::kSeg, task == Task::kHeight, task == Task::kWeek};
}

TaskSet TaskSet::parse(const std::string& text) {
  if (lower(text) == "all") return {};
  TaskSet t{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    switch (parse_task(item)) {
      case Task::kSeg: t.seg = true; break;
      case Task::kHeight: t.height = true; break;
      case Task::kWeek: t.week = true; break;
    }
  }
  if (!t.any()) throw ConfigError("task list '" + text + "' is empty");
  return t;
}

std::string TaskSet::str() const {
  std::string s;
  auto append = [&s](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ",";
    s += name;
  };
  append(seg, "seg");
  append(height, "height");
  append(week, "week");
  return s;
}

bool TaskSet::contains(Task task) const {
  switch (task) {
    case Task::kSeg: return seg;
    case Task::kHeight: return height;
    case Task::kWeek: return week;
  }
  return false;
}

ModelConfig ModelConfig::preset(SizeVariant size) {
  ModelConfig c;
  c.size = size;
  switch (size) {
    case SizeVariant::kSmall:
      c.branch = {{32, 32, 64}, {8, 16, 32, 64}, {1, 1, 2}, 4};
      c.embed_dim = 256;
      c.heads = 4;
      c.head_hidden = {512, 256};
      c.agg_channels = 64;
      c.seg_mid_channels = 32;
      break;
    case SizeVariant::kMedium:
      break;
    case SizeVariant::kLarge:
      c.branch = {{96, 96, 192}, {24, 48, 96, 192}, {3, 3, 6}, 6};
      c.embed_dim = 768;
      c.heads = 12;
      c.head_hidden = {1536, 768};
      break;
  }
  c.ffn_dim = 4 * c.embed_dim;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.branch = {{8, 8, 16}, {2, 4, 8, 16}, {2, 2, 4}, 6};
  c.agg_channels = 16;
  c.seg_mid_channels = 16;
  c.embed_dim = 64;
  c.heads = 8;
  c.ffn_dim = 256;
  c.head_hidden = {128, 64};
  return c;
}

SegHeadSpec ModelConfig::seg_spec() const {
  return {agg_channels, seg_mid_channels, seg_dropout, num_classes, 8};
}

TGDSpec ModelConfig::tgd_spec() const {
  return {agg_channels, embed_dim, heads, ffn_dim, head_hidden, num_weeks};
}

void ModelConfig::validate() const {
  for (Index c : branch.detail_channels)
    if (c < 1) throw ConfigError("detail channels must be positive");
  for (Index c : branch.semantic_channels)
    if (c < 1) throw ConfigError("semantic channels must be positive");
  if (branch.semantic_channels[0] < 2) throw ConfigError("stem needs at least 2 channels");
  if (agg_channels < 1) throw ConfigError("aggregation channels must be positive");
  if (!tasks.any()) throw ConfigError("at least one task is required");
  static const char* kStage[3] = {"S3", "S4", "S5"};
  const auto specs = SemanticBranch<float>::block_specs(branch, kernel, use_se, layer_scale_init);
  std::size_t k = 0;
  for (int s = 0; s < 3; ++s) {
    const int n = branch.uib_blocks_per_stage[static_cast<std::size_t>(s)];
    if (n < 1) throw ConfigError(std::string("stage ") + kStage[s] + " needs at least one UIB block");
    for (int i = 0; i < n; ++i, ++k) {
      specs[k].validate(std::string("stage ") + kStage[s] + " block " + std::to_string(i) + " (kernel " +
                        kernel.str() + ")");
    }
  }
  if (tasks.seg) seg_spec().validate();
  if (tasks.decoder_needed()) tgd_spec().validate();
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"size", to_string(size)},
      {"detail_channels", branch.detail_channels},
      {"semantic_channels", branch.semantic_channels},
      {"uib_blocks_per_stage", branch.uib_blocks_per_stage},
      {"expansion_ratio", branch.expansion_ratio},
      {"kernel", kernel.str()},
      {"use_se", use_se},
      {"layer_scale_init", layer_scale_init},
      {"agg_channels", agg_channels},
      {"seg_mid_channels", seg_mid_channels},
      {"seg_dropout", seg_dropout},
      {"embed_dim", embed_dim},
      {"heads", heads},
      {"ffn_dim", ffn_dim},
      {"head_hidden", head_hidden},
      {"aux_enabled", aux_enabled},
      {"num_classes", num_classes},
      {"num_weeks", num_weeks},
      {"tasks", tasks.str()},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, const ModelConfig& base) {
  ModelConfig c = base;
  try {
    if (j.contains("size")) c.size = parse_size(j.at("size").get<std::string>());
    if (j.contains("detail_channels")) c.branch.detail_channels = j.at("detail_channels").get<std::array<Index, 3>>();
    if (j.contains("semantic_channels")) {
      c.branch.semantic_channels = j.at("semantic_channels").get<std::array<Index, 4>>();
    }
    if (j.contains("uib_blocks_per_stage")) {
      c.branch.uib_blocks_per_stage = j.at("uib_blocks_per_stage").get<std::array<int, 3>>();
    }
    if (j.contains("expansion_ratio")) c.branch.expansion_ratio = j.at("expansion_ratio").get<int>();
    if (j.contains("kernel")) c.kernel = KernelConfig::parse(j.at("kernel").get<std::string>());
    if (j.contains("use_se")) c.use_se = j.at("use_se").get<bool>();
    if (j.contains("layer_scale_init")) c.layer_scale_init = j.at("layer_scale_init").get<double>();
    if (j.contains("agg_channels")) c.agg_channels = j.at("agg_channels").get<Index>();
    if (j.contains("seg_mid_channels")) c.seg_mid_channels = j.at("seg_mid_channels").get<Index>();
    if (j.contains("seg_dropout")) c.seg_dropout = j.at("seg_dropout").get<double>();
    if (j.contains("embed_dim")) c.embed_dim = j.at("embed_dim").get<Index>();
    if (j.contains("heads")) c.heads = j.at("heads").get<int>();
    if (j.contains("ffn_dim")) c.ffn_dim = j.at("ffn_dim").get<Index>();
    if (j.contains("head_hidden")) c.head_hidden = j.at("head_hidden").get<std::array<Index, 2>>();
    if (j.contains("aux_enabled")) c.aux_enabled = j.at("aux_enabled").get<bool>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<Index>();
    if (j.contains("num_weeks")) c.num_weeks = j.at("num_weeks").get<Index>();
    if (j.contains("tasks")) c.tasks = TaskSet::parse(j.at("tasks").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

ModelConfig single_task_config(const ModelConfig& config, Task task) {
  ModelConfig c = config;
  c.tasks = TaskSet::only(task);
  return c;
}

}  // namespace weedsense
