#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <optional>

#include "weedsense/core/gradcheck.hpp"
#include "weedsense/core/init.hpp"
#include "weedsense/data/image_io.hpp"
#include "weedsense/data/synth.hpp"
#include "weedsense/model/gradcam.hpp"
#include "weedsense/train/trainer.hpp"

namespace weedsense::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Flags shared by every command that builds a model.
struct ModelOptions {
  std::string config_path;
  std::string size = "medium";
  std::string kernel;
  std::optional<bool> se;
  std::optional<bool> aux;
  std::optional<Index> channels;
  std::string tasks;
  bool tiny = false;

  void add_to(CLI::App& app) {
    app.add_option("--config", config_path, "JSON file with optional \"model\" and \"train\" sections");
    app.add_option("--size", size, "size variant")->check(CLI::IsMember({"small", "medium", "large"}));
    app.add_option("--kernel", kernel, "UIB depthwise kernels, e.g. s0m3e0");
    app.add_flag_function("--se,!--no-se", [this](std::int64_t v) { se = v > 0; }, "squeeze-and-excitation");
    app.add_flag_function("--aux,!--no-aux", [this](std::int64_t v) { aux = v > 0; }, "auxiliary seg heads");
    app.add_option_function<Index>("--channels", [this](Index c) { channels = c; }, "aggregation channels")
        ->check(CLI::IsMember({64, 128, 256}));
    app.add_option("--tasks", tasks, "comma-separated subset of seg,height,week");
    app.add_flag("--tiny", tiny, "Medium with every width divided by 8");
  }

  json config_file() const { return config_path.empty() ? json::object() : read_json(config_path); }

  ModelConfig resolve() const {
    ModelConfig c = tiny ? ModelConfig::tiny() : ModelConfig::preset(parse_size(size));
    const json file = config_file();
    if (file.contains("model")) c = ModelConfig::from_json(file.at("model"), c);
    if (!kernel.empty()) c.kernel = KernelConfig::parse(kernel);
    if (se) c.use_se = *se;
    if (aux) c.aux_enabled = *aux;
    if (channels) c.agg_channels = *channels;
    if (!tasks.empty()) c.tasks = TaskSet::parse(tasks);
    c.validate();
    return c;
  }
};

// Training hyperparameters from the "train" section of a config file.
void apply_train_json(const json& j, TrainConfig& cfg) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", cfg.epochs);
  get("batch_size", cfg.batch_size);
  get("base_lr", cfg.schedule.base_lr);
  get("warmup_iters", cfg.schedule.warmup_iters);
  get("min_lr", cfg.schedule.min_lr);
  get("warmup_start_factor", cfg.schedule.warmup_start_factor);
  get("weight_decay", cfg.adam.weight_decay);
  get("augment", cfg.augment);
  get("uniform_class_weights", cfg.uniform_class_weights);
  if (j.contains("loss_weights")) cfg.weights = LossWeights::from_json(j.at("loss_weights"));
  if (j.contains("norm")) cfg.norm = Normalization::from_json(j.at("norm"));
  if (j.contains("aug")) {
    const json& a = j.at("aug");
    if (a.contains("scale_min")) cfg.aug.scale_min = a.at("scale_min").get<double>();
    if (a.contains("scale_max")) cfg.aug.scale_max = a.at("scale_max").get<double>();
    if (a.contains("hflip_prob")) cfg.aug.hflip_prob = a.at("hflip_prob").get<double>();
  }
}

json provenance(const std::string& command, int argc, const char* const* argv, std::uint64_t seed, json resolved) {
  json args = json::array();
  for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
  return {{"tool", "weedsense"}, {"version", kVersion}, {"command", command},
          {"argv", args},        {"seed", seed},        {"resolved", std::move(resolved)}};
}

// Samples of one split, or of the whole manifest when it carries no splits.
std::vector<Sample> load_selection(const Manifest& m, const std::string& split) {
  if (split == "all") {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < m.entries.size(); ++i) out.push_back(load_sample(m, i));
    return out;
  }
  const bool has_splits = std::any_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.split.has_value(); });
  if (!has_splits) throw DataError("manifest has no split labels; use --split all");
  return load_split(m, parse_split(split));
}

std::vector<Sample> resized(std::vector<Sample> samples, Index size) {
  if (size <= 0) return samples;
  for (Sample& s : samples)
    if (s.height() != size || s.width() != size) s = resize_sample(s, size, size);
  return samples;
}

std::string default_split(const Manifest& m) {
  const bool has_splits = std::any_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.split.has_value(); });
  return has_splits ? "train" : "all";
}

// describe ---------------------------------------------------------------------

json profile_row(const ModelConfig& c, Index size) {
  const ProfileReport r = profile(c, size, size);
  return {{"kernel", c.kernel.str()},
          {"se", c.use_se},
          {"aux", c.aux_enabled},
          {"channels", c.agg_channels},
          {"size", to_string(c.size)},
          {"params", r.total_params},
          {"params_m", static_cast<double>(r.total_params) / 1e6},
          {"flops_g", static_cast<double>(r.total_flops) / 1e9}};
}

json sweep(const ModelConfig& base, Index size) {
  json rows = json::array();
  for (const KernelConfig& k : KernelConfig::ablation_grid())
    for (bool se : {true, false}) {
      ModelConfig c = base;
      c.kernel = k;
      c.use_se = se;
      rows.push_back(profile_row(c, size));
    }
  for (Index ch : {64, 128, 256})
    for (bool se : {true, false}) {
      ModelConfig c = base;
      c.agg_channels = ch;
      c.use_se = se;
      rows.push_back(profile_row(c, size));
    }
  ModelConfig no_aux = base;
  no_aux.aux_enabled = false;
  rows.push_back(profile_row(no_aux, size));
  return rows;
}

// bench ------------------------------------------------------------------------

double median_latency_ms(const WeedSenseModel<float>& model, const TensorF& image, int warmup, int iters) {
  const Var<float> input = Var<float>::constant(image);
  for (int i = 0; i < warmup; ++i) model.forward(input, Mode::kEval);
  std::vector<double> ms;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(input, Mode::kEval);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(ms.begin(), ms.begin() + static_cast<std::ptrdiff_t>(ms.size() / 2), ms.end());
  const double upper = ms[ms.size() / 2];
  if (ms.size() % 2 == 1) return upper;
  return 0.5 * (upper + *std::max_element(ms.begin(), ms.begin() + static_cast<std::ptrdiff_t>(ms.size() / 2)));
}

// gradcam ----------------------------------------------------------------------

json heatmap_stats(const TensorF& map) {
  const Index h = map.dim(2), w = map.dim(3);
  double top = 0, bottom = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) (2 * y < h ? top : bottom) += map[y * w + x];
  return {{"height", h},
          {"width", w},
          {"min", map.vec().minCoeff()},
          {"max", map.vec().maxCoeff()},
          {"top_half_mass", top},
          {"bottom_half_mass", bottom}};
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"WeedSense multi-task weed segmentation, height and growth-stage toolkit", "weedsense"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);

  std::uint64_t seed = 0;
  std::string out_dir;
  Index input_size = 0;

  // describe
  CLI::App* describe = app.add_subcommand("describe", "parameter and FLOP profile of a configuration");
  ModelOptions describe_model;
  bool do_sweep = false;
  describe_model.add_to(*describe);
  describe->add_option("--input-size", input_size, "square input side for FLOPs (default 512)");
  describe->add_flag("--sweep", do_sweep, "profile the kernel, SE, channel and aux ablation grid");
  describe->add_option("--out", out_dir, "also write describe.json and provenance.json here");

  // synth
  CLI::App* synth = app.add_subcommand("synth", "write a procedural plant dataset");
  int synth_n = 8;
  double px_per_cm = 0, noise = 0.04;
  bool synth_split = false;
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--n", synth_n, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--input-size", input_size, "image side in pixels (default 512)");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--px-per-cm", px_per_cm, "stem scale; default fits the tallest plant");
  synth->add_option("--noise", noise, "relative height jitter");
  synth->add_flag("--split", synth_split, "assign stratified 80/10/10 train/val/test splits");

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a manifest");
  ModelOptions train_model;
  TrainConfig tc;
  std::string manifest_path, train_split, resume_path;
  bool no_augment = false, uniform_weights = false;
  std::optional<double> lr;
  std::optional<Index> warmup;
  std::optional<int> epochs, batch;
  train_model.add_to(*train_cmd);
  train_cmd->add_option("--manifest", manifest_path, "dataset manifest")->required();
  train_cmd->add_option("--out", out_dir, "run directory for log.csv, checkpoint and provenance")->required();
  train_cmd->add_option("--seed", seed, "model and training seed");
  train_cmd->add_option_function<int>("--epochs", [&](int v) { epochs = v; }, "epochs")->check(CLI::NonNegativeNumber);
  train_cmd->add_option_function<int>("--batch", [&](int v) { batch = v; }, "batch size (>= 2)");
  train_cmd->add_option_function<double>("--lr", [&](double v) { lr = v; }, "base learning rate");
  train_cmd->add_option_function<Index>("--warmup", [&](Index v) { warmup = v; }, "warmup iterations");
  train_cmd->add_option("--stop-after", tc.stop_after, "stop after this many total iterations");
  train_cmd->add_option("--input-size", input_size, "training crop / resize side");
  train_cmd->add_option("--split", train_split, "train, val, test or all (default train if labelled)");
  train_cmd->add_option("--resume", resume_path, "continue from a checkpoint");
  train_cmd->add_flag("--no-augment", no_augment, "disable scale/crop/flip augmentation");
  train_cmd->add_flag("--uniform-weights", uniform_weights, "unit class weights instead of median frequency");

  // eval
  CLI::App* eval_cmd = app.add_subcommand("eval", "metrics of a checkpoint on a manifest");
  std::string checkpoint_path, eval_split;
  bool table = false;
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", manifest_path, "dataset manifest")->required();
  eval_cmd->add_option("--split", eval_split, "train, val, test or all (default every labelled split)");
  eval_cmd->add_option("--input-size", input_size, "resize images to this side");
  eval_cmd->add_option("--out", out_dir, "also write metrics.json and provenance.json here");
  eval_cmd->add_flag("--table", table, "print a fixed-width table instead of JSON");

  // gradcheck
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  bool gc_tiny = false;
  gradcheck->add_flag("--tiny", gc_tiny, "also check the full tiny model with the multi-task loss");
  gradcheck->add_option("--seed", seed, "probe seed");
  gradcheck->add_option("--out", out_dir, "also write gradcheck.json and provenance.json here");

  // bench
  CLI::App* bench = app.add_subcommand("bench", "multitask vs single-task inference latency");
  ModelOptions bench_model;
  int bench_warmup = 20, bench_iters = 100;
  bench_model.add_to(*bench);
  bench->add_option("--input-size", input_size, "square input side (default 256)");
  bench->add_option("--seed", seed, "weight and input seed");
  bench->add_option("--warmup", bench_warmup, "untimed runs per model")->check(CLI::NonNegativeNumber);
  bench->add_option("--iters", bench_iters, "timed runs per model")->check(CLI::PositiveNumber);
  bench->add_option("--out", out_dir, "also write bench.json and provenance.json here");

  // gradcam
  CLI::App* gradcam = app.add_subcommand("gradcam", "Grad-CAM heatmaps per task");
  ModelOptions cam_model;
  std::string image_path;
  int species = 1, week = kNumWeeks;
  cam_model.add_to(*gradcam);
  gradcam->add_option("--checkpoint", checkpoint_path, "checkpoint file (default: fresh model from flags)");
  gradcam->add_option("--image", image_path, "RGB PNG (default: synthetic plant)");
  gradcam->add_option("--species", species, "synthetic plant species id")->check(CLI::Range(1, kNumSpecies));
  gradcam->add_option("--week", week, "synthetic plant week")->check(CLI::Range(1, kNumWeeks));
  gradcam->add_option("--input-size", input_size, "image side (default 256)");
  gradcam->add_option("--seed", seed, "model and image seed");
  gradcam->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string what = e.what();
    std::replace(what.begin(), what.end(), '\n', ' ');
    err << "error: usage: " << what << "\n" << app.help();
    return 2;
  }

  try {
    const fs::path dir = out_dir;

    if (describe->parsed()) {
      const ModelConfig c = describe_model.resolve();
      const Index size = input_size > 0 ? input_size : 512;
      json report{{"config", c.to_json()}, {"profile", profile(c, size, size).to_json()}};
      if (do_sweep) report["sweep"] = sweep(c, size);
      out << report.dump(2) << "\n";
      if (!out_dir.empty()) {
        write_json(dir / "describe.json", report);
        write_json(dir / "provenance.json", provenance("describe", argc, argv, 0, {{"model", c.to_json()}, {"input_size", size}}));
      }
      return 0;
    }

    if (synth->parsed()) {
      SynthSpec spec;
      spec.image_size = input_size > 0 ? input_size : 512;
      spec.noise = noise;
      spec.seed = seed;
      spec.px_per_cm = px_per_cm > 0 ? px_per_cm : fit_px_per_cm(spec);
      spec.validate();
      Manifest m = write_dataset(synthesize_samples(spec, synth_n), dir);
      if (synth_split) {
        m = split_dataset(std::move(m), {}, seed);
        m.save(dir / "manifest.json");
      }
      write_json(dir / "provenance.json", provenance("synth", argc, argv, seed, {{"synth", spec.to_json()}, {"split", synth_split}}));
      out << json{{"manifest", (dir / "manifest.json").string()}, {"samples", m.entries.size()}, {"px_per_cm", spec.px_per_cm}}.dump()
          << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const json file = train_model.config_file();
      if (file.contains("train")) apply_train_json(file.at("train"), tc);
      if (epochs) tc.epochs = *epochs;
      if (batch) tc.batch_size = *batch;
      if (lr) tc.schedule.base_lr = *lr;
      if (warmup) tc.schedule.warmup_iters = *warmup;
      if (no_augment) tc.augment = false;
      if (uniform_weights) tc.uniform_class_weights = true;
      tc.seed = seed;

      const Manifest m = Manifest::load(manifest_path);
      const std::string split = train_split.empty() ? default_split(m) : train_split;
      std::vector<Sample> data = load_selection(m, split);
      if (data.empty()) throw DataError("split '" + split + "' is empty");
      if (tc.augment) {
        const Index side = input_size > 0 ? input_size : data[0].height();
        tc.aug.target_h = tc.aug.target_w = side;
      } else {
        data = resized(std::move(data), input_size);
      }

      std::optional<Checkpoint> resume;
      WeedSenseModel<float> model = [&] {
        if (resume_path.empty()) return WeedSenseModel<float>(train_model.resolve(), seed);
        resume = Checkpoint::load(resume_path);
        return resume->make_model();
      }();
      fs::create_directories(dir);
      const TrainResult r = train(model, data, tc, resume ? &*resume : nullptr);

      std::ostringstream csv;
      write_log_csv(csv, r.log);
      write_text(dir / "log.csv", csv.str());
      r.checkpoint.save(dir / "checkpoint.ckpt");
      json resolved{{"model", model.config().to_json()}, {"train", tc.to_json()}, {"manifest", manifest_path},
                    {"split", split},                   {"samples", data.size()},  {"class_weights", r.class_weights}};
      if (resume) resolved["resumed_from"] = resume_path;
      write_json(dir / "provenance.json", provenance("train", argc, argv, seed, resolved));
      json summary{{"iterations", r.checkpoint.iteration}, {"log", (dir / "log.csv").string()},
                   {"checkpoint", (dir / "checkpoint.ckpt").string()}};
      if (!r.log.empty()) {
        summary["first_loss"] = r.log.front().total;
        summary["last_loss"] = r.log.back().total;
      }
      out << summary.dump() << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      const Checkpoint ckpt = Checkpoint::load(checkpoint_path);
      const WeedSenseModel<float> model = ckpt.make_model();
      const Manifest m = Manifest::load(manifest_path);
      Normalization norm;
      if (ckpt.train_config.contains("norm")) norm = Normalization::from_json(ckpt.train_config.at("norm"));
      std::vector<std::string> splits;
      if (!eval_split.empty()) {
        splits = {eval_split};
      } else {
        for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
          if (!m.indices(s).empty()) splits.push_back(to_string(s));
        if (splits.empty()) splits = {"all"};
      }
      json report = json::object();
      for (const std::string& s : splits) {
        const std::vector<Sample> data = resized(load_selection(m, s), input_size);
        if (data.empty()) continue;
        report[s] = evaluate(model, data, norm).to_json();
      }
      if (table) {
        auto cell = [](const json& section, const char* key, double scale) {
          std::ostringstream o;
          if (section.is_null() || section.at(key).is_null()) return std::string("-");
          o << std::fixed << std::setprecision(2) << section.at(key).get<double>() * scale;
          return o.str();
        };
        out << std::left << std::setw(8) << "split" << std::right << std::setw(9) << "mIoU" << std::setw(9) << "mF1"
            << std::setw(9) << "MAE" << std::setw(9) << "RMSE" << std::setw(9) << "R2" << std::setw(10) << "WeekAcc"
            << std::setw(9) << "WeekF1" << "\n";
        for (const auto& [s, r] : report.items()) {
          out << std::left << std::setw(8) << s << std::right << std::setw(9) << cell(r["seg"], "miou", 100)
              << std::setw(9) << cell(r["seg"], "mf1", 100) << std::setw(9) << cell(r["height"], "mae_cm", 1)
              << std::setw(9) << cell(r["height"], "rmse_cm", 1) << std::setw(9) << cell(r["height"], "r2", 1)
              << std::setw(10) << cell(r["week"], "accuracy", 100) << std::setw(9) << cell(r["week"], "macro_f1", 100)
              << "\n";
        }
      } else {
        out << report.dump(2) << "\n";
      }
      if (!out_dir.empty()) {
        write_json(dir / "metrics.json", report);
        write_json(dir / "provenance.json",
                   provenance("eval", argc, argv, ckpt.model_seed,
                              {{"checkpoint", checkpoint_path}, {"manifest", manifest_path}, {"splits", splits},
                               {"model", ckpt.config.to_json()}, {"input_size", input_size}}));
      }
      return 0;
    }

    if (gradcheck->parsed()) {
      constexpr double kPrimitiveTol = 1e-4, kModelTol = 1e-3;
      json report{{"primitives", json::array()}};
      bool ok = true;
      for (const NamedGradCheck& c : primitive_gradient_checks(seed)) {
        const double e = c.report.max_rel_error();
        ok = ok && e <= kPrimitiveTol;
        report["primitives"].push_back({{"name", c.name}, {"max_rel_error", e}, {"pass", e <= kPrimitiveTol}});
      }
      if (gc_tiny) {
        ModelGradCheckOptions o;
        o.seed = seed;
        const GradCheckReport r = model_gradient_check(o);
        const auto worst = std::max_element(r.entries.begin(), r.entries.end(),
                                            [](const auto& a, const auto& b) { return a.max_rel_error < b.max_rel_error; });
        const double e = r.max_rel_error();
        ok = ok && e <= kModelTol;
        report["model"] = {{"tensors", r.entries.size()},
                           {"max_rel_error", e},
                           {"worst", worst == r.entries.end() ? "" : worst->name},
                           {"pass", e <= kModelTol}};
      }
      report["pass"] = ok;
      out << report.dump(2) << "\n";
      if (!out_dir.empty()) {
        write_json(dir / "gradcheck.json", report);
        write_json(dir / "provenance.json", provenance("gradcheck", argc, argv, seed, {{"tiny", gc_tiny}}));
      }
      if (!ok) throw NumericError("gradient check exceeded tolerance");
      return 0;
    }

    if (bench->parsed()) {
      const ModelConfig c = bench_model.resolve();
      const Index size = input_size > 0 ? input_size : 256;
      const TensorF image = uniform_tensor<float>({1, 3, size, size}, 2.0, derive_seed(seed, "bench-image"));
      const WeedSenseModel<float> multi(c, seed);
      json singles = json::object();
      double single_sum = 0;
      Index single_params = 0;
      for (Task t : {Task::kSeg, Task::kHeight, Task::kWeek}) {
        const WeedSenseModel<float> single = build_single_task<float>(c, t, seed);
        const double ms = median_latency_ms(single, image, bench_warmup, bench_iters);
        const Index params = count_parameters(single.config()).total_params;
        singles[to_string(t)] = {{"median_ms", ms}, {"params", params}};
        single_sum += ms;
        single_params += params;
      }
      const double multi_ms = median_latency_ms(multi, image, bench_warmup, bench_iters);
      const Index multi_params = count_parameters(c).total_params;
      const json report{{"input_size", size},
                        {"warmup", bench_warmup},
                        {"iters", bench_iters},
                        {"multitask", {{"median_ms", multi_ms}, {"params", multi_params}}},
                        {"single_task", singles},
                        {"single_sum_ms", single_sum},
                        {"latency_ratio", multi_ms / single_sum},
                        {"single_params_sum", single_params},
                        {"param_reduction", 1.0 - static_cast<double>(multi_params) / static_cast<double>(single_params)}};
      out << report.dump(2) << "\n";
      if (!out_dir.empty()) {
        write_json(dir / "bench.json", report);
        write_json(dir / "provenance.json",
                   provenance("bench", argc, argv, seed, {{"model", c.to_json()}, {"input_size", size}}));
      }
      return 0;
    }

    if (gradcam->parsed()) {
      const WeedSenseModel<float> model =
          checkpoint_path.empty() ? WeedSenseModel<float>(cam_model.resolve(), seed) : Checkpoint::load(checkpoint_path).make_model();
      const Index size = input_size > 0 ? input_size : 256;
      TensorF rgb;
      if (image_path.empty()) {
        SynthSpec spec;
        spec.image_size = size;
        spec.seed = seed;
        spec.px_per_cm = fit_px_per_cm(spec);
        rgb = synthesize_sample(spec, species, week, 0).image;
      } else {
        Sample s;
        s.image = read_png_rgb(image_path);
        s.mask.assign(static_cast<std::size_t>(s.height() * s.width()), 0);
        rgb = resize_sample(s, size, size).image;
      }
      fs::create_directories(dir);
      write_png_rgb(dir / "input.png", rgb);
      TensorF batch({1, 3, size, size});
      std::copy(rgb.data(), rgb.data() + rgb.numel(), batch.data());
      batch = normalize_image(batch, Normalization{});
      json report = json::object();
      for (Task t : {Task::kSeg, Task::kHeight, Task::kWeek}) {
        if (!model.config().tasks.contains(t)) continue;
        const GradCamResult<float> cam = grad_cam(model, batch, t);
        const fs::path png = dir / ("heatmap_" + to_string(t) + ".png");
        write_heatmap_png(png, cam.map);
        json stats = heatmap_stats(cam.map);
        stats["degenerate"] = cam.degenerate;
        stats["target"] = cam.target;
        stats["image"] = png.string();
        report[to_string(t)] = stats;
      }
      write_json(dir / "gradcam.json", report);
      write_json(dir / "provenance.json",
                 provenance("gradcam", argc, argv, seed,
                            {{"model", model.config().to_json()}, {"checkpoint", checkpoint_path}, {"image", image_path},
                             {"species", species}, {"week", week}, {"input_size", size}}));
      out << report.dump(2) << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace weedsense::cli
