#include "weedsense/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "weedsense/core/random.hpp"
#include "weedsense/data/image_io.hpp"

namespace weedsense {
namespace {

Index margin(Index size) { return size / 16; }

std::array<float, 3> hsv(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(hh);
  const double f = hh - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (i) {
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
    default: break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

std::string sample_id(int species, int week, int replicate) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_w%02d_r%d", std::string(class_names()[static_cast<std::size_t>(species)]).c_str(),
                week, replicate);
  return buf;
}

}  // namespace

void SynthSpec::validate() const {
  if (image_size < 32 || image_size % 32 != 0) {
    throw ConfigError("synthetic image size " + std::to_string(image_size) + " must be a positive multiple of 32");
  }
  if (!(px_per_cm > 0)) throw ConfigError("px_per_cm must be positive");
  if (!(noise >= 0 && noise < 1)) throw ConfigError("height noise must lie in [0,1)");
  for (double r : growth_rate_cm_per_week)
    if (!(r > 0)) throw ConfigError("growth rates must be positive");
}

nlohmann::json SynthSpec::to_json() const {
  return {{"image_size", image_size},
          {"px_per_cm", px_per_cm},
          {"noise", noise},
          {"seed", seed},
          {"growth_rate_cm_per_week", growth_rate_cm_per_week}};
}

double fit_px_per_cm(const SynthSpec& spec) {
  const double tallest = *std::max_element(spec.growth_rate_cm_per_week.begin(), spec.growth_rate_cm_per_week.end()) *
                         kNumWeeks * (1 + spec.noise);
  const double room = static_cast<double>(spec.image_size - 2 * margin(spec.image_size));
  return std::floor(room / tallest * 1000.0) / 1000.0;
}

Sample synthesize_sample(const SynthSpec& spec, int species_id, int week, int replicate) {
  spec.validate();
  if (species_id < 1 || species_id > kNumSpecies) {
    throw DataError("synthetic species " + std::to_string(species_id) + " outside 1..16");
  }
  if (week < 1 || week > kNumWeeks) throw DataError("synthetic week " + std::to_string(week) + " outside 1..11");
  Rng rng(derive_seed(spec.seed, "synth", species_id, week, replicate));
  Sample s;
  s.id = sample_id(species_id, week, replicate);
  s.species_id = species_id;
  s.week = week;
  const double rate = spec.growth_rate_cm_per_week[static_cast<std::size_t>(species_id - 1)];
  s.height_cm = rate * week * (1 + spec.noise * rng.uniform(-1, 1));

  const Index size = spec.image_size;
  const Index base_y = size - 1 - margin(size);
  const Index h_px = std::max<Index>(1, std::llround(s.height_cm * spec.px_per_cm));
  const Index top = base_y - h_px + 1;
  if (top < 0) {
    throw ConfigError("plant of " + std::to_string(s.height_cm) + " cm needs " + std::to_string(h_px) +
                      " px at px_per_cm=" + std::to_string(spec.px_per_cm) + " but the image holds " +
                      std::to_string(base_y + 1) + "; use a smaller px_per_cm (at most " +
                      std::to_string(fit_px_per_cm(spec)) + " fits every plant)");
  }

  s.image = TensorF({3, size, size});
  s.mask.assign(static_cast<std::size_t>(size * size), 0);
  const Index plane = size * size;
  for (Index p = 0; p < plane; ++p) {
    const float n = static_cast<float>(rng.uniform(-0.04, 0.04));
    s.image[p] = 0.42F + n;
    s.image[plane + p] = 0.33F + n;
    s.image[2 * plane + p] = 0.24F + n;
  }
  const double hue = static_cast<double>(species_id - 1) / kNumSpecies;
  const auto stem_color = hsv(hue, 0.75, 0.9);
  const auto leaf_color = hsv(hue, 0.8, 0.65);
  auto paint = [&](Index y, Index x, const std::array<float, 3>& color) {
    if (y < top || y > base_y || x < 0 || x >= size) return;
    for (Index c = 0; c < 3; ++c) s.image[c * plane + y * size + x] = color[static_cast<std::size_t>(c)];
    s.mask[static_cast<std::size_t>(y * size + x)] = static_cast<std::uint8_t>(species_id);
  };

  const Index stem_w = std::max<Index>(2, size / 64);
  const Index cx = size / 2 + static_cast<Index>(rng.uniform(-1, 1) * static_cast<double>(size / 8));
  const Index x0 = cx - stem_w / 2;
  for (Index y = top; y <= base_y; ++y)
    for (Index x = x0; x < x0 + stem_w; ++x) paint(y, x, stem_color);

  const double aspect = 1.5 + 0.8 * ((species_id - 1) % 4);
  const double a = std::clamp(0.18 * static_cast<double>(h_px) + 2.0, 2.0, static_cast<double>(size) / 6.0);
  const double b = std::max(1.0, a / aspect);
  const int leaves = std::min(week, 6);
  for (int i = 0; i < leaves; ++i) {
    const double ey = static_cast<double>(base_y) - static_cast<double>(h_px) * (i + 1.0) / (leaves + 1.0);
    const double side = i % 2 == 0 ? 1.0 : -1.0;
    const double ex = static_cast<double>(cx) + side * (a + static_cast<double>(stem_w) / 2.0);
    for (Index y = static_cast<Index>(std::floor(ey - b)); y <= static_cast<Index>(std::ceil(ey + b)); ++y)
      for (Index x = static_cast<Index>(std::floor(ex - a)); x <= static_cast<Index>(std::ceil(ex + a)); ++x) {
        const double dx = (static_cast<double>(x) - ex) / a, dy = (static_cast<double>(y) - ey) / b;
        if (dx * dx + dy * dy <= 1.0) paint(y, x, leaf_color);
      }
  }
  return s;
}

std::vector<Sample> synthesize_dataset(const SynthSpec& spec, int n_per_cell) {
  if (n_per_cell < 1) throw ConfigError("samples per cell must be positive");
  std::vector<Sample> out;
  for (int species = 1; species <= kNumSpecies; ++species)
    for (int week = 1; week <= kNumWeeks; ++week)
      for (int r = 0; r < n_per_cell; ++r) out.push_back(synthesize_sample(spec, species, week, r));
  return out;
}

std::vector<Sample> synthesize_samples(const SynthSpec& spec, int n) {
  if (n < 1) throw ConfigError("sample count must be positive");
  std::vector<std::pair<int, int>> cells;
  for (int species = 1; species <= kNumSpecies; ++species)
    for (int week = 1; week <= kNumWeeks; ++week) cells.emplace_back(species, week);
  Rng rng(derive_seed(spec.seed, "cells"));
  rng.shuffle(cells.begin(), cells.end());
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    const auto [species, week] = cells[static_cast<std::size_t>(i) % cells.size()];
    out.push_back(synthesize_sample(spec, species, week, i / static_cast<int>(cells.size())));
  }
  return out;
}

Manifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  Manifest m;
  m.base_dir = dir;
  for (auto n : class_names()) m.class_names.emplace_back(n);
  for (const Sample& s : samples) {
    s.validate();
    ManifestEntry e;
    e.id = s.id;
    e.image_path = "images/" + s.id + ".png";
    e.mask_path = "masks/" + s.id + ".png";
    e.height_cm = s.height_cm;
    e.week = s.week;
    e.species_id = s.species_id;
    write_png_rgb(dir / e.image_path, s.image);
    write_png_gray(dir / e.mask_path, {s.height(), s.width(), s.mask});
    m.entries.push_back(std::move(e));
  }
  m.save(dir / "manifest.json");
  return m;
}

}  // namespace weedsense
