#include "weedsense/train/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "weedsense/core/init.hpp"
#include "weedsense/core/random.hpp"

namespace weedsense {

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"schedule", schedule.to_json()},
          {"weights", weights.to_json()},
          {"adam", adam.to_json()},
          {"augment", augment},
          {"aug", aug.to_json()},
          {"norm", norm.to_json()},
          {"uniform_class_weights", uniform_class_weights},
          {"seed", seed}};
}

void write_log_csv(std::ostream& out, const std::vector<LogRow>& rows) {
  out << kLogHeader << "\n";
  out.precision(17);
  for (const LogRow& r : rows) {
    out << r.iter << "," << r.lr << "," << r.total << "," << r.seg << "," << r.aux << "," << r.height << "," << r.week
        << "\n";
  }
}

// Checkpoint ------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'W', 'S', 'N', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

Checkpoint Checkpoint::capture(const WeedSenseModel<float>& model, const AdamW<float>* optimizer, Index iteration) {
  Checkpoint c;
  c.config = model.config();
  c.model_seed = model.seed();
  c.iteration = iteration;
  for (const auto& p : model.parameters().all()) c.params[p->name] = p->value;
  if (optimizer != nullptr) {
    c.adam_steps = optimizer->steps();
    c.moments = optimizer->moments();
  }
  return c;
}

WeedSenseModel<float> Checkpoint::make_model() const {
  WeedSenseModel<float> model(config, model_seed);
  apply(model);
  return model;
}

void Checkpoint::apply(WeedSenseModel<float>& model) const {
  for (const auto& p : model.parameters().all()) {
    auto it = params.find(p->name);
    if (it == params.end()) throw ConfigError("checkpoint lacks parameter '" + p->name + "'");
    p->value.require_same_shape(it->second, p->name.c_str());
    p->value = it->second;
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const TensorF*> order;
  auto add = [&](const std::string& name, const char* kind, const TensorF& t) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape().dims()}});
    order.push_back(&t);
  };
  for (const auto& [name, t] : params) add(name, "param", t);
  for (const auto& [name, m] : moments) {
    add(name, "adam_m", m.m);
    add(name, "adam_v", m.v);
  }
  const nlohmann::json header{{"config", config.to_json()},     {"model_seed", model_seed},
                              {"iteration", iteration},         {"adam_steps", adam_steps},
                              {"train_config", train_config},   {"dtype", "float32-le"},
                              {"tensors", tensors}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kFormatVersion), sizeof kFormatVersion);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (const TensorF* t : order) {
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * sizeof(float)));
  }
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path.string() + " is not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kFormatVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint header in " + path.string());
  const auto header = nlohmann::json::parse(text);
  Checkpoint c;
  c.config = ModelConfig::from_json(header.at("config"));
  c.model_seed = header.at("model_seed").get<std::uint64_t>();
  c.iteration = header.at("iteration").get<Index>();
  c.adam_steps = header.at("adam_steps").get<std::int64_t>();
  c.train_config = header.at("train_config");
  for (const auto& t : header.at("tensors")) {
    TensorF value(Shape(t.at("shape").get<std::vector<Index>>()));
    in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.numel() * sizeof(float)));
    if (!in) throw DataError("truncated tensor data in " + path.string());
    const auto name = t.at("name").get<std::string>();
    const auto kind = t.at("kind").get<std::string>();
    if (kind == "param") {
      c.params[name] = std::move(value);
    } else if (kind == "adam_m") {
      c.moments[name].m = std::move(value);
    } else if (kind == "adam_v") {
      c.moments[name].v = std::move(value);
    } else {
      throw DataError("unknown tensor kind '" + kind + "' in checkpoint");
    }
  }
  return c;
}

// Training --------------------------------------------------------------------

TrainResult train(WeedSenseModel<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const Checkpoint* resume, const std::function<void(const LogRow&)>& on_iter) {
  if (data.empty()) throw DataError("training set is empty");
  if (cfg.epochs < 0) throw ConfigError("epoch count must be non-negative");
  if (cfg.batch_size < 2) throw ConfigError("batch size must be at least 2 (batch norm statistics)");
  const auto n = static_cast<Index>(data.size());
  if (n < 2) throw ConfigError("training needs at least 2 samples (batch norm statistics)");
  const Index batch = cfg.batch_size;
  const Index per_epoch = (n + batch - 1) / batch;
  const Index total = cfg.epochs * per_epoch;
  ScheduleSpec schedule = cfg.schedule;
  schedule.total_iters = total;
  schedule.validate();
  if (cfg.augment) cfg.aug.validate();

  TrainResult result;
  result.class_weights = cfg.uniform_class_weights ? uniform_class_weights(static_cast<int>(model.config().num_classes))
                                                   : class_pixel_weights(data, static_cast<int>(model.config().num_classes));
  AdamW<float> optimizer(model.parameters(), cfg.adam);
  Index start = 0;
  if (resume != nullptr) {
    resume->apply(model);
    optimizer.restore(resume->adam_steps, resume->moments);
    start = resume->iteration;
  }
  const Index end = cfg.stop_after >= 0 ? std::min(total, cfg.stop_after) : total;

  std::vector<Index> order(static_cast<std::size_t>(n));
  Index order_epoch = -1;
  Index it = start;
  for (; it < end; ++it) {
    const Index epoch = it / per_epoch, step = it % per_epoch;
    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(cfg.seed, "order", epoch));
      rng.shuffle(order.begin(), order.end());
      order_epoch = epoch;
    }
    std::vector<Sample> augmented;
    std::vector<const Sample*> members;
    augmented.reserve(static_cast<std::size_t>(batch));
    for (Index j = 0; j < batch; ++j) {
      const Sample& s = data[static_cast<std::size_t>(order[static_cast<std::size_t>((step * batch + j) % n)])];
      if (cfg.augment) {
        augmented.push_back(augment(s, cfg.aug, derive_seed(cfg.seed, s.id, epoch)));
        members.push_back(&augmented.back());
      } else {
        members.push_back(&s);
      }
    }
    const Batch b = make_batch(members, cfg.norm);

    model.parameters().zero_grad();
    Tape<float> tape;
    const ForwardOutput<float> out =
        model.forward(Var<float>::constant(b.image), Mode::kTrain, derive_seed(cfg.seed, "dropout", it));
    const LossBreakdown<float> loss = multi_task_loss(out, b, result.class_weights, cfg.weights);
    if (!std::isfinite(loss.total)) {
      std::string ids;
      for (const auto& id : b.ids) ids += (ids.empty() ? "" : ",") + id;
      throw NumericError("non-finite loss at iteration " + std::to_string(it) + " on batch [" + ids + "]");
    }
    accumulate_parameter_gradients(tape, loss.loss);
    const double lr = lr_at(schedule, it);
    optimizer.step(lr);
    const LogRow row{it, lr, loss.total, loss.seg, loss.aux, loss.height, loss.week};
    result.log.push_back(row);
    if (on_iter) on_iter(row);
  }
  result.checkpoint = Checkpoint::capture(model, &optimizer, it);
  nlohmann::json tc = cfg.to_json();
  tc["schedule"]["total_iters"] = total;
  result.checkpoint.train_config = tc;
  return result;
}

MetricsReport evaluate(const WeedSenseModel<float>& model, const std::vector<Sample>& data, const Normalization& norm) {
  if (data.empty()) throw DataError("evaluation set is empty");
  const ModelConfig& c = model.config();
  ConfusionMatrix cm(static_cast<int>(c.num_classes));
  std::vector<double> height_pred, height_gt;
  std::vector<int> week_pred, week_gt;
  for (const Sample& s : data) {
    const Batch b = make_batch({&s}, norm);
    const ForwardOutput<float> out = model.forward(Var<float>::constant(b.image), Mode::kEval);
    if (c.tasks.seg) cm.add_logits(out.seg.value(), b.mask);
    if (c.tasks.height) {
      height_pred.push_back(static_cast<double>(out.height.value()[0]));
      height_gt.push_back(s.height_cm);
    }
    if (c.tasks.week) {
      week_pred.push_back(static_cast<int>(argmax(out.week.value().data(), c.num_weeks)));
      week_gt.push_back(s.week - 1);
    }
  }
  MetricsReport r;
  r.samples = static_cast<Index>(data.size());
  if (c.tasks.seg) r.seg = cm.summarize();
  if (c.tasks.height && height_gt.size() >= 2) r.height = evaluate_regression(height_pred, height_gt);
  if (c.tasks.week) r.week = evaluate_classification(week_pred, week_gt, static_cast<int>(c.num_weeks));
  return r;
}

GradCheckReport model_gradient_check(const ModelGradCheckOptions& o) {
  ModelConfig config = ModelConfig::tiny();
  config.layer_scale_init = 0.5;
  WeedSenseModel<double> model(config, derive_seed(o.seed, "model"));
  const Index n = o.batch, s = o.input_size;
  const TensorD image = uniform_tensor<double>({n, 3, s, s}, 1.0, derive_seed(o.seed, "image"));
  Rng rng(derive_seed(o.seed, "labels"));
  Batch b;
  for (Index i = 0; i < n; ++i) {
    b.ids.push_back("probe" + std::to_string(i));
    b.height_cm.push_back(rng.uniform(0.0, 2.0));
    b.week.push_back(1 + static_cast<int>(rng.below(kNumWeeks)));
  }
  for (Index p = 0; p < n * s * s; ++p) b.mask.push_back(static_cast<std::int32_t>(rng.below(kNumClasses)));
  std::vector<double> class_weights;
  for (int c = 0; c < kNumClasses; ++c) class_weights.push_back(rng.uniform(0.5, 1.5));
  const std::uint64_t dropout_seed = derive_seed(o.seed, "dropout");
  auto loss_fn = [&]() {
    const ForwardOutput<double> out = model.forward(Var<double>::constant(image), Mode::kTrain, dropout_seed);
    return multi_task_loss(out, b, class_weights, LossWeights{}).loss;
  };
  GradCheckOptions g;
  g.step = o.step;
  g.floor = o.floor;
  g.samples_per_tensor = o.samples_per_tensor;
  g.seed = derive_seed(o.seed, "probe");
  return check_gradients(model.parameters(), loss_fn, g);
}

}  // namespace weedsense
