#pragma once

#include <filesystem>

#include "weedsense/data/dataset.hpp"

namespace weedsense {

/// Procedural plant images: a species-colored vertical stem whose pixel
/// height is height_cm * px_per_cm, with species-shaped leaf blobs along it.
/// The mask is the exact set of painted plant pixels.
struct SynthSpec {
  Index image_size = 512;
  double px_per_cm = 2.5;
  /// Relative height jitter: h = rate * week * (1 + noise * u), u in [-1,1].
  double noise = 0.04;
  std::uint64_t seed = 0;
  std::array<double, kNumSpecies> growth_rate_cm_per_week = species_growth_rates();

  void validate() const;
  nlohmann::json to_json() const;
};

/// Largest px_per_cm at which the tallest plant `spec` can produce fits the frame.
double fit_px_per_cm(const SynthSpec& spec);

/// Renders one plant; `replicate` distinguishes repeated draws of a cell.
Sample synthesize_sample(const SynthSpec& spec, int species_id, int week, int replicate);

/// Every (species, week) cell `n_per_cell` times.
std::vector<Sample> synthesize_dataset(const SynthSpec& spec, int n_per_cell);

/// `n` samples from a seed-determined sequence of distinct cells.
std::vector<Sample> synthesize_samples(const SynthSpec& spec, int n);

/// Writes images/<id>.png, masks/<id>.png and manifest.json under `dir`.
Manifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);

}  // namespace weedsense
