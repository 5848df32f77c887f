#include "weedsense/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "weedsense/core/random.hpp"
#include "weedsense/data/image_io.hpp"

namespace weedsense {

const std::array<std::string_view, kNumClasses>& class_names() {
  static const std::array<std::string_view, kNumClasses> names{
      "background", "AMATU", "SORHA", "SETFA", "SORVU", "PANDI", "SETPU", "DIGSA", "ECHCG",
      "SIDSP",      "AMARE", "ABUTH", "AMBEL", "AMAPA", "CYPES", "CHEAL", "ERICA"};
  return names;
}

const std::array<double, kNumSpecies>& species_growth_rates() {
  static const std::array<double, kNumSpecies> rates{13.72, 14.06, 11.75, 9.84, 8.40, 8.20, 7.53, 7.38,
                                                     6.77,  6.86,  6.32,  6.19, 5.66, 5.42, 2.86, 1.70};
  return rates;
}

int species_from_code(std::string_view code) {
  const auto& names = class_names();
  for (int i = 1; i < kNumClasses; ++i)
    if (names[static_cast<std::size_t>(i)] == code) return i;
  throw DataError("unknown species code '" + std::string(code) + "'");
}

void Sample::validate() const {
  const std::string where = "sample '" + id + "': ";
  if (image.rank() != 3 || image.dim(0) != 3) throw DataError(where + "image must be [3,H,W], got " + image.shape().str());
  if (static_cast<Index>(mask.size()) != height() * width()) {
    throw DataError(where + "mask has " + std::to_string(mask.size()) + " pixels, image has " +
                    std::to_string(height() * width()));
  }
  if (week < 1 || week > kNumWeeks) throw DataError(where + "week " + std::to_string(week) + " outside 1..11");
  if (species_id < 1 || species_id > kNumSpecies) {
    throw DataError(where + "species_id " + std::to_string(species_id) + " outside 1..16");
  }
  if (!(height_cm >= 0.0 && height_cm <= kMaxHeightCm)) {
    throw DataError(where + "height_cm " + std::to_string(height_cm) + " outside 0..200");
  }
  for (Index i = 0; i < image.numel(); ++i) {
    const float v = image[i];
    if (!(v >= 0.0F && v <= 1.0F)) throw DataError(where + "image value outside [0,1]");
  }
  for (std::uint8_t label : mask) {
    if (label >= kNumClasses) throw DataError(where + "mask label " + std::to_string(label) + " outside 0..16");
    if (label != 0 && label != species_id) {
      throw DataError(where + "mask label " + std::to_string(label) + " differs from species " +
                      std::to_string(species_id));
    }
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw DataError("unknown split '" + text + "' (expected train, val or test)");
}

Manifest Manifest::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir, bool check_files) {
  Manifest m;
  m.base_dir = base_dir;
  std::vector<std::string> problems;
  if (!j.is_object() || !j.contains("entries") || !j.at("entries").is_array()) {
    throw DataError("manifest: expected an object with an 'entries' array");
  }
  if (j.contains("class_names")) {
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (m.class_names.size() != kNumClasses) {
      problems.push_back("class_names has " + std::to_string(m.class_names.size()) + " entries, expected 17");
    }
  } else {
    for (auto n : weedsense::class_names()) m.class_names.emplace_back(n);
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < j.at("entries").size(); ++i) {
    const auto& e = j.at("entries")[i];
    ManifestEntry entry;
    try {
      entry.id = e.at("id").get<std::string>();
      entry.image_path = e.at("image_path").get<std::string>();
      entry.mask_path = e.at("mask_path").get<std::string>();
      entry.height_cm = e.at("height_cm").get<double>();
      entry.week = e.at("week").get<int>();
      entry.species_id = e.at("species_id").get<int>();
      if (e.contains("split") && !e.at("split").is_null()) entry.split = parse_split(e.at("split").get<std::string>());
    } catch (const std::exception& ex) {
      problems.push_back("entry " + std::to_string(i) + ": " + ex.what());
      continue;
    }
    const std::string where = "entry '" + entry.id + "': ";
    if (!seen.insert(entry.id).second) problems.push_back(where + "duplicate id");
    if (entry.week < 1 || entry.week > kNumWeeks) {
      problems.push_back(where + "week " + std::to_string(entry.week) + " outside 1..11");
    }
    if (entry.species_id < 1 || entry.species_id > kNumSpecies) {
      problems.push_back(where + "species_id " + std::to_string(entry.species_id) + " outside 1..16");
    }
    if (!(entry.height_cm >= 0.0 && entry.height_cm <= kMaxHeightCm)) {
      problems.push_back(where + "height_cm " + std::to_string(entry.height_cm) + " outside 0..200");
    }
    if (check_files) {
      for (const std::string* p : {&entry.image_path, &entry.mask_path}) {
        if (!std::filesystem::exists(m.resolve(*p))) problems.push_back(where + "missing file " + m.resolve(*p).string());
      }
    }
    m.entries.push_back(std::move(entry));
  }
  if (!problems.empty()) {
    std::string msg = "manifest has " + std::to_string(problems.size()) + " error(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return m;
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path(), true);
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : this->entries) {
    nlohmann::json je{{"id", e.id},         {"image_path", e.image_path}, {"mask_path", e.mask_path},
                      {"height_cm", e.height_cm}, {"week", e.week},       {"species_id", e.species_id}};
    je["split"] = e.split ? nlohmann::json(to_string(*e.split)) : nlohmann::json(nullptr);
    entries.push_back(std::move(je));
  }
  return {{"class_names", class_names}, {"entries", entries}};
}

void Manifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << to_json().dump(2) << "\n";
}

std::filesystem::path Manifest::resolve(const std::string& relative) const {
  const std::filesystem::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::size_t> Manifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

Sample load_sample(const Manifest& manifest, std::size_t index) {
  const ManifestEntry& e = manifest.entries.at(index);
  Sample s;
  s.id = e.id;
  s.image = read_png_rgb(manifest.resolve(e.image_path));
  GrayImage mask = read_png_gray(manifest.resolve(e.mask_path));
  if (mask.height != s.height() || mask.width != s.width()) {
    throw DataError("sample '" + e.id + "': mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                    ", image is " + std::to_string(s.height()) + "x" + std::to_string(s.width()));
  }
  s.mask = std::move(mask.pixels);
  s.height_cm = e.height_cm;
  s.week = e.week;
  s.species_id = e.species_id;
  s.validate();
  return s;
}

std::vector<Sample> load_split(const Manifest& manifest, Split split) {
  std::vector<Sample> out;
  for (std::size_t i : manifest.indices(split)) out.push_back(load_sample(manifest, i));
  return out;
}

Manifest split_dataset(Manifest manifest, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0) throw ConfigError("split fractions must be non-negative");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions sum to " + std::to_string(f.train + f.val + f.test) + ", expected 1");
  }
  std::map<int, std::vector<std::size_t>> by_species;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) by_species[manifest.entries[i].species_id].push_back(i);
  for (auto& [species, idx] : by_species) {
    Rng rng(derive_seed(seed, "split", species));
    rng.shuffle(idx.begin(), idx.end());
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
    const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(f.val * n)));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      manifest.entries[idx[k]].split = k < n_train ? Split::kTrain : k < n_train + n_val ? Split::kVal : Split::kTest;
    }
  }
  return manifest;
}

nlohmann::json Normalization::to_json() const { return {{"mean", mean}, {"std", std}}; }

Normalization Normalization::from_json(const nlohmann::json& j) {
  Normalization n;
  if (j.contains("mean")) n.mean = j.at("mean").get<std::array<float, 3>>();
  if (j.contains("std")) n.std = j.at("std").get<std::array<float, 3>>();
  return n;
}

namespace {

template <typename Fn>
TensorF per_channel(const TensorF& image, const Normalization& norm, Fn fn) {
  const int ch_axis = image.rank() == 4 ? 1 : 0;
  if ((image.rank() != 3 && image.rank() != 4) || image.dim(ch_axis) != 3) {
    throw DimensionError("normalization expects [3,H,W] or [N,3,H,W], got " + image.shape().str());
  }
  for (float s : norm.std)
    if (!(s != 0.0F) || !std::isfinite(s)) throw ConfigError("normalization std must be non-zero and finite");
  TensorF out(image.shape());
  const Index plane = image.dim(image.rank() - 2) * image.dim(image.rank() - 1);
  const Index n = image.rank() == 4 ? image.dim(0) : 1;
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < 3; ++c) {
      const Index off = (b * 3 + c) * plane;
      for (Index p = 0; p < plane; ++p) {
        out[off + p] = fn(image[off + p], norm.mean[static_cast<std::size_t>(c)], norm.std[static_cast<std::size_t>(c)]);
      }
    }
  return out;
}

}  // namespace

TensorF normalize_image(const TensorF& image, const Normalization& norm) {
  return per_channel(image, norm, [](float x, float m, float s) { return (x - m) / s; });
}

TensorF denormalize_image(const TensorF& image, const Normalization& norm) {
  return per_channel(image, norm, [](float x, float m, float s) { return x * s + m; });
}

std::vector<double> median_frequency_weights(const std::vector<std::int64_t>& pixel_counts) {
  std::int64_t total = 0;
  for (auto c : pixel_counts) total += c;
  std::vector<double> weights(pixel_counts.size(), 0.0);
  if (total == 0) return weights;
  std::vector<double> freqs;
  for (auto c : pixel_counts)
    if (c > 0) freqs.push_back(static_cast<double>(c) / static_cast<double>(total));
  std::sort(freqs.begin(), freqs.end());
  const std::size_t m = freqs.size();
  const double median = m % 2 == 1 ? freqs[m / 2] : 0.5 * (freqs[m / 2 - 1] + freqs[m / 2]);
  for (std::size_t c = 0; c < pixel_counts.size(); ++c) {
    if (pixel_counts[c] > 0) weights[c] = median / (static_cast<double>(pixel_counts[c]) / static_cast<double>(total));
  }
  return weights;
}

std::vector<double> class_pixel_weights(const std::vector<Sample>& samples, int num_classes) {
  if (samples.empty()) throw DataError("class weights need a non-empty training split");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const Sample& s : samples) {
    for (std::uint8_t label : s.mask) {
      if (label >= num_classes) throw DataError("sample '" + s.id + "': mask label " + std::to_string(label) + " out of range");
      ++counts[label];
    }
  }
  return median_frequency_weights(counts);
}

std::vector<double> uniform_class_weights(int num_classes) {
  return std::vector<double>(static_cast<std::size_t>(num_classes), 1.0);
}

}  // namespace weedsense
