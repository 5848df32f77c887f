#include "weedsense/model/model.hpp"

namespace weedsense {
namespace {

constexpr std::array<const char*, 4> kAuxNames{"stem", "s3", "s4", "s5"};

}  // namespace

template <typename Scalar>
WeedSenseModel<Scalar>::WeedSenseModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), store_(std::make_unique<ParameterStore<Scalar>>()) {
  config.validate();
  const LayerScope<Scalar> root{store_.get(), seed, ""};
  const BranchSpec& b = config.branch;
  detail_ = DetailBranch<Scalar>(root.child("encoder.detail"), b.detail_channels);
  semantic_ = SemanticBranch<Scalar>(root.child("encoder.semantic"), b, config.kernel, config.use_se,
                                     config.layer_scale_init);
  aggregation_ = Aggregation<Scalar>(root.child("encoder.aggregation"), b.detail_channels[2], b.semantic_channels[3],
                                     config.agg_channels);
  if (config.has_aux()) {
    for (std::size_t i = 0; i < 4; ++i) {
      aux_.emplace_back(root.child(std::string("aux.") + kAuxNames[i]), b.semantic_channels[i], kAuxFactors[i],
                        config.num_classes);
    }
  }
  if (config.tasks.seg) seg_head_ = SegHead<Scalar>(root.child("decoder.seg"), config.seg_spec());
  if (config.tasks.decoder_needed()) {
    tgd_ = TemporalGrowthDecoder<Scalar>(root.child("decoder.tgd"), config.tgd_spec());
    task_heads_ = TaskHeads<Scalar>(root.child("decoder.heads"), config.tgd_spec(), config.tasks.height,
                                    config.tasks.week);
  }
}

template <typename Scalar>
ForwardOutput<Scalar> WeedSenseModel<Scalar>::forward(const Var<Scalar>& image, Mode mode,
                                                      std::uint64_t dropout_seed) const {
  const Shape& s = image.shape();
  if (s.rank() != 4 || s[1] != 3) throw DimensionError("model input must be [N,3,H,W], got " + s.str());
  if (s[2] % 32 != 0) {
    throw DimensionError("model input height axis (2) extent " + std::to_string(s[2]) + " not divisible by 32");
  }
  if (s[3] % 32 != 0) {
    throw DimensionError("model input width axis (3) extent " + std::to_string(s[3]) + " not divisible by 32");
  }
  ForwardOutput<Scalar> out;
  Var<Scalar> detail = detail_(image, mode);
  SemanticFeatures<Scalar> sem = semantic_(image, mode);
  out.aggregated = aggregation_(detail, sem.context, mode);
  if (mode == Mode::kTrain && !aux_.empty()) {
    const std::array<const Var<Scalar>*, 4> stages{&sem.stem, &sem.s3, &sem.s4, &sem.s5};
    for (std::size_t i = 0; i < 4; ++i) out.aux.push_back(aux_[i](*stages[i], mode));
  }
  if (config_.tasks.seg) out.seg = seg_head_(out.aggregated, mode, dropout_seed);
  if (config_.tasks.decoder_needed()) {
    TaskOutputs<Scalar> t = task_heads_(tgd_(out.aggregated));
    out.height = t.height;
    out.week = t.week;
  }
  return out;
}

nlohmann::json ProfileReport::to_json() const {
  return {{"total_params", total_params}, {"params_by_module", params_by_module},
          {"input_h", input_h},           {"input_w", input_w},
          {"total_macs", total_macs},     {"total_flops", total_flops},
          {"flops_by_module", flops_by_module}, {"convention", convention}};
}

namespace {

// Per-module costs at batch 1. Aux entries carry parameters only.
std::map<std::string, Cost> module_costs(const ModelConfig& c, Index h, Index w) {
  c.validate();
  std::map<std::string, Cost> m;
  const BranchSpec& b = c.branch;
  m["detail"] = DetailBranch<float>::cost(b.detail_channels, h, w);
  const auto sem = SemanticBranch<float>::cost(b, c.kernel, c.use_se, h, w);
  m["semantic.stem"] = sem[0];
  m["semantic.uib"] = sem[1];
  m["semantic.context"] = sem[2];
  m["aggregation"] = Aggregation<float>::cost(b.detail_channels[2], b.semantic_channels[3], c.agg_channels, h, w);
  if (c.has_aux()) {
    Cost aux;
    for (std::size_t i = 0; i < 4; ++i) {
      const Index f = kAuxFactors[i];
      aux.params += AuxHead<float>::cost(b.semantic_channels[i], kAuxFactors[i], c.num_classes, h / f, w / f).params;
    }
    m["aux"] = aux;
  }
  if (c.tasks.seg) m["seg_head"] = SegHead<float>::cost(c.seg_spec(), h / 8, w / 8);
  if (c.tasks.decoder_needed()) {
    m["tgd"] = TemporalGrowthDecoder<float>::cost(c.tgd_spec());
    m["task_heads"] = TaskHeads<float>::cost(c.tgd_spec(), c.tasks.height, c.tasks.week);
  }
  return m;
}

}  // namespace

ProfileReport count_parameters(const ModelConfig& config) {
  ProfileReport r;
  for (const auto& [name, cost] : module_costs(config, 512, 512)) {
    r.params_by_module[name] = cost.params;
    r.total_params += cost.params;
  }
  return r;
}

ProfileReport count_flops(const ModelConfig& config, Index h, Index w) {
  if (h % 32 != 0 || w % 32 != 0 || h < 32 || w < 32) {
    throw DimensionError("profile input " + std::to_string(h) + "x" + std::to_string(w) +
                         " must be a positive multiple of 32 on both axes");
  }
  ProfileReport r;
  r.input_h = h;
  r.input_w = w;
  for (const auto& [name, cost] : module_costs(config, h, w)) {
    if (cost.macs == 0 && name == "aux") continue;
    r.flops_by_module[name] = 2 * cost.macs;
    r.total_macs += cost.macs;
  }
  r.total_flops = 2 * r.total_macs;
  return r;
}

ProfileReport profile(const ModelConfig& config, Index h, Index w) {
  ProfileReport r = count_flops(config, h, w);
  const ProfileReport p = count_parameters(config);
  r.total_params = p.total_params;
  r.params_by_module = p.params_by_module;
  return r;
}

template class WeedSenseModel<float>;
template class WeedSenseModel<double>;

}  // namespace weedsense
