#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "weedsense/core/tensor.hpp"

namespace weedsense {

inline constexpr int kNumSpecies = 16;
inline constexpr int kNumClasses = 17;
inline constexpr int kNumWeeks = 11;
inline constexpr double kMaxHeightCm = 200.0;

/// Background followed by the 16 EPPO species codes; index = mask label.
const std::array<std::string_view, kNumClasses>& class_names();
/// Mean growth rate in cm/week of species 1..16 (index species-1).
const std::array<double, kNumSpecies>& species_growth_rates();
/// 1..16 for an EPPO code; throws DataError otherwise.
int species_from_code(std::string_view code);

/// One annotated frame. The mask holds class indices, row-major H*W.
struct Sample {
  std::string id;
  TensorF image;  // [3,H,W] in [0,1]
  std::vector<std::uint8_t> mask;
  double height_cm = 0;
  int week = 1;
  int species_id = 1;

  Index height() const { return image.dim(1); }
  Index width() const { return image.dim(2); }
  /// Throws DataError naming the id on any violated invariant.
  void validate() const;
};

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the manifest directory unless absolute
  std::string mask_path;
  double height_cm = 0;
  int week = 1;
  int species_id = 1;
  std::optional<Split> split;
};

/// Dataset index. Labels live in the manifest itself so a single file can be
/// validated atomically.
struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::filesystem::path base_dir;

  /// Reads and validates; every problem found is listed in one DataError.
  static Manifest load(const std::filesystem::path& path);
  static Manifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir, bool check_files);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  std::filesystem::path resolve(const std::string& relative) const;
  std::vector<std::size_t> indices(Split split) const;
};

/// Decodes the image and mask of entry `index`; pixel labels are checked here.
Sample load_sample(const Manifest& manifest, std::size_t index);
std::vector<Sample> load_split(const Manifest& manifest, Split split);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Stratified by species: each species is shuffled with its own derived seed
/// and cut at the requested fractions.
Manifest split_dataset(Manifest manifest, const SplitFractions& fractions, std::uint64_t seed);

struct Normalization {
  std::array<float, 3> mean{0.485F, 0.456F, 0.406F};
  std::array<float, 3> std{0.229F, 0.224F, 0.225F};

  nlohmann::json to_json() const;
  static Normalization from_json(const nlohmann::json& j);
};

/// (x - mean) / std per channel of [3,H,W] or [N,3,H,W].
TensorF normalize_image(const TensorF& image, const Normalization& norm);
TensorF denormalize_image(const TensorF& image, const Normalization& norm);

/// Median-frequency balancing: w_c = median_freq / freq_c over classes with
/// pixels; classes without pixels get weight 0.
std::vector<double> median_frequency_weights(const std::vector<std::int64_t>& pixel_counts);
std::vector<double> class_pixel_weights(const std::vector<Sample>& samples, int num_classes = kNumClasses);
std::vector<double> uniform_class_weights(int num_classes = kNumClasses);

}  // namespace weedsense
