#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "weedsense/data/image_io.hpp"
#include "weedsense/data/synth.hpp"

using namespace weedsense;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("weedsense_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

SynthSpec small_spec(Index size = 64) {
  SynthSpec spec;
  spec.image_size = size;
  spec.px_per_cm = fit_px_per_cm(spec);
  return spec;
}

nlohmann::json entry_json(const std::string& id, int week) {
  return {{"id", id}, {"image_path", id + ".png"}, {"mask_path", id + "_m.png"}, {"height_cm", 4.0}, {"week", week},
          {"species_id", 2}};
}

Manifest balanced_manifest(int per_species) {
  Manifest m;
  for (int s = 1; s <= kNumSpecies; ++s)
    for (int i = 0; i < per_species; ++i) {
      ManifestEntry e;
      e.id = std::string(class_names()[static_cast<std::size_t>(s)]) + "_" + std::to_string(i);
      e.image_path = e.id + ".png";
      e.mask_path = e.id + "_m.png";
      e.species_id = s;
      e.week = 1 + i % kNumWeeks;
      m.entries.push_back(e);
    }
  return m;
}

}  // namespace

// Manifest --------------------------------------------------------------------

TEST(Manifest, WrittenDatasetRoundTrips) {
  TempDir dir("manifest_roundtrip");
  const auto samples = synthesize_samples(small_spec(), 5);
  const Manifest written = write_dataset(samples, dir.path());
  const Manifest loaded = Manifest::load(dir.path() / "manifest.json");
  ASSERT_EQ(loaded.entries.size(), 5u);
  EXPECT_EQ(loaded.to_json(), written.to_json());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample s = load_sample(loaded, i);
    EXPECT_EQ(s.id, samples[i].id);
    EXPECT_EQ(s.mask, samples[i].mask);
    EXPECT_EQ(s.height_cm, samples[i].height_cm);
    EXPECT_EQ(s.week, samples[i].week);
    EXPECT_LE((s.image.vec() - samples[i].image.vec()).cwiseAbs().maxCoeff(), 0.5F / 255.0F + 1e-6F);
  }
}

TEST(Manifest, InvalidWeekIsRejectedNamingTheSample) {
  nlohmann::json j{{"entries", {entry_json("good", 3), entry_json("late_plant", 12)}}};
  try {
    Manifest::from_json(j, ".", false);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("late_plant"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("'good'"), std::string::npos) << msg;
  }
}

TEST(Manifest, ReportsEveryProblemAtOnce) {
  nlohmann::json bad_height = entry_json("tall", 3);
  bad_height["height_cm"] = 250.0;
  nlohmann::json j{{"entries", {entry_json("dup", 3), entry_json("dup", 4), bad_height}}};
  try {
    Manifest::from_json(j, ".", false);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dup"), std::string::npos) << msg;
    EXPECT_NE(msg.find("tall"), std::string::npos) << msg;
  }
}

TEST(Manifest, MissingFilesAreReported) {
  TempDir dir("manifest_missing");
  nlohmann::json j{{"entries", {entry_json("ghost", 2)}}};
  EXPECT_THROW(Manifest::from_json(j, dir.path(), true), DataError);
  EXPECT_NO_THROW(Manifest::from_json(j, dir.path(), false));
  EXPECT_THROW(Manifest::load(dir.path() / "absent.json"), IoError);
}

TEST(Manifest, MaskLabelOutsideSpeciesIsRejectedAtLoad) {
  TempDir dir("manifest_badmask");
  const auto samples = synthesize_samples(small_spec(), 1);
  const Manifest m = write_dataset(samples, dir.path());
  GrayImage mask = read_png_gray(m.resolve(m.entries[0].mask_path));
  mask.pixels[0] = 17;
  write_png_gray(m.resolve(m.entries[0].mask_path), mask);
  try {
    load_sample(m, 0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(samples[0].id), std::string::npos);
  }
}

// Splits ----------------------------------------------------------------------

TEST(Split, BalancedSpeciesStayWithinTwoPercent) {
  const Manifest m = split_dataset(balanced_manifest(100), {}, 7);
  std::map<int, std::array<int, 3>> counts;
  for (const auto& e : m.entries) {
    ASSERT_TRUE(e.split.has_value());
    ++counts[e.species_id][static_cast<std::size_t>(*e.split)];
  }
  ASSERT_EQ(counts.size(), static_cast<std::size_t>(kNumSpecies));
  for (const auto& [species, c] : counts) {
    const double n = c[0] + c[1] + c[2];
    EXPECT_NEAR(c[0] / n, 0.8, 0.02) << species;
    EXPECT_NEAR(c[1] / n, 0.1, 0.02) << species;
    EXPECT_NEAR(c[2] / n, 0.1, 0.02) << species;
  }
  EXPECT_EQ(m.indices(Split::kTrain).size() + m.indices(Split::kVal).size() + m.indices(Split::kTest).size(), 1600u);
}

TEST(Split, DeterministicAndSeedSensitive) {
  const Manifest base = balanced_manifest(20);
  EXPECT_EQ(split_dataset(base, {}, 3).to_json(), split_dataset(base, {}, 3).to_json());
  EXPECT_NE(split_dataset(base, {}, 3).to_json(), split_dataset(base, {}, 4).to_json());
}

TEST(Split, AllTrainAndInvalidFractions) {
  const Manifest m = split_dataset(balanced_manifest(5), {1.0, 0.0, 0.0}, 1);
  EXPECT_EQ(m.indices(Split::kTrain).size(), m.entries.size());
  EXPECT_TRUE(m.indices(Split::kVal).empty());
  EXPECT_THROW(split_dataset(balanced_manifest(5), {0.5, 0.3, 0.3}, 1), ConfigError);
  EXPECT_THROW(split_dataset(balanced_manifest(5), {1.2, -0.1, -0.1}, 1), ConfigError);
}

// Synthetic generator ---------------------------------------------------------

TEST(Synth, HeightFollowsGrowthRate) {
  SynthSpec spec = small_spec(128);
  spec.noise = 0.0;
  spec.growth_rate_cm_per_week.fill(2.0);
  spec.px_per_cm = 5.0;
  const Sample s = synthesize_sample(spec, 4, 1, 0);
  EXPECT_NEAR(s.height_cm, 2.0, 1e-12);
  EXPECT_EQ(s.week, 1);
  EXPECT_EQ(s.species_id, 4);
  s.validate();
}

TEST(Synth, MaskCoversExactlyThePaintedPlant) {
  const SynthSpec spec = small_spec();
  for (int species : {1, 8, 16}) {
    const Sample s = synthesize_sample(spec, species, 6, 0);
    Index plant = 0;
    for (Index p = 0; p < s.height() * s.width(); ++p) {
      const auto label = s.mask[static_cast<std::size_t>(p)];
      ASSERT_TRUE(label == 0 || label == species);
      plant += label != 0;
    }
    EXPECT_GT(plant, 0);
    Index soil_like_plant = 0;
    for (Index p = 0; p < s.height() * s.width(); ++p) {
      if (s.mask[static_cast<std::size_t>(p)] == 0) continue;
      const float r = s.image[p], g = s.image[s.height() * s.width() + p], b = s.image[2 * s.height() * s.width() + p];
      soil_like_plant += std::abs(r - 0.42F) < 0.05F && std::abs(g - 0.33F) < 0.05F && std::abs(b - 0.24F) < 0.05F;
    }
    EXPECT_EQ(soil_like_plant, 0) << species;
  }
}

TEST(Synth, HeightsIncreaseWithWeek) {
  SynthSpec spec = small_spec();
  spec.noise = 0.0;
  for (int species = 1; species <= kNumSpecies; ++species) {
    double prev = 0;
    Index prev_rows = 0;
    for (int week = 1; week <= kNumWeeks; ++week) {
      const Sample s = synthesize_sample(spec, species, week, 0);
      EXPECT_GT(s.height_cm, prev);
      Index rows = 0;
      for (Index y = 0; y < s.height(); ++y) {
        bool any = false;
        for (Index x = 0; x < s.width(); ++x) any = any || s.mask[static_cast<std::size_t>(y * s.width() + x)] != 0;
        rows += any;
      }
      EXPECT_GE(rows, prev_rows) << species << " week " << week;
      prev = s.height_cm;
      prev_rows = rows;
    }
  }
}

TEST(Synth, ReproducibleFromSeed) {
  const SynthSpec spec = small_spec();
  const Sample a = synthesize_sample(spec, 5, 3, 2), b = synthesize_sample(spec, 5, 3, 2);
  EXPECT_EQ(a.id, b.id);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_TRUE(a.image.vec() == b.image.vec());
  SynthSpec other = spec;
  other.seed = 1;
  EXPECT_FALSE(synthesize_sample(other, 5, 3, 2).image.vec() == a.image.vec());
}

TEST(Synth, PlantTallerThanFrameIsAConfigError) {
  SynthSpec spec = small_spec();
  spec.px_per_cm = 10.0;
  EXPECT_THROW(synthesize_sample(spec, 1, 11, 0), ConfigError);
  EXPECT_THROW(synthesize_sample(spec, 0, 1, 0), DataError);
  EXPECT_THROW(synthesize_sample(spec, 1, 12, 0), DataError);
}

// Normalization ---------------------------------------------------------------

TEST(Normalize, IdentityMeanZeroStdOne) {
  Normalization id;
  id.mean = {0, 0, 0};
  id.std = {1, 1, 1};
  const TensorF img = synthesize_sample(small_spec(), 2, 2, 0).image;
  EXPECT_TRUE(normalize_image(img, id).vec() == img.vec());
}

TEST(Normalize, MeanColouredImageMapsToZero) {
  const Normalization n;
  TensorF img({2, 3, 4, 4});
  for (Index b = 0; b < 2; ++b)
    for (Index c = 0; c < 3; ++c)
      for (Index p = 0; p < 16; ++p) img[(b * 3 + c) * 16 + p] = n.mean[static_cast<std::size_t>(c)];
  EXPECT_LT(normalize_image(img, n).vec().cwiseAbs().maxCoeff(), 1e-7F);
}

TEST(Normalize, RoundTripAndZeroStd) {
  const Normalization n;
  const TensorF img = synthesize_sample(small_spec(), 9, 4, 0).image;
  EXPECT_LT((denormalize_image(normalize_image(img, n), n).vec() - img.vec()).cwiseAbs().maxCoeff(), 1e-6F);
  Normalization bad;
  bad.std[1] = 0;
  EXPECT_THROW(normalize_image(img, bad), ConfigError);
  EXPECT_THROW(normalize_image(TensorF({4, 4}), n), DimensionError);
}

// Class weights ---------------------------------------------------------------

TEST(ClassWeights, MedianFrequency) {
  for (double w : median_frequency_weights({10, 10, 10})) EXPECT_DOUBLE_EQ(w, 1.0);
  const auto skewed = median_frequency_weights({90, 10});
  EXPECT_LT(skewed[0], 1.0);
  EXPECT_GT(skewed[1], 1.0);
  EXPECT_DOUBLE_EQ(skewed[0], 50.0 / 90.0);
  const auto absent = median_frequency_weights({5, 0, 20, 5});
  EXPECT_EQ(absent[1], 0.0);
  EXPECT_DOUBLE_EQ(absent[0], 1.0);
  EXPECT_DOUBLE_EQ(absent[2], 0.25);
}

TEST(ClassWeights, FromSamplesCountsPixels) {
  const auto samples = synthesize_samples(small_spec(), 6);
  const auto w = class_pixel_weights(samples);
  ASSERT_EQ(w.size(), static_cast<std::size_t>(kNumClasses));
  EXPECT_LT(w[0], 1.0);
  std::set<int> species;
  for (const auto& s : samples) species.insert(s.species_id);
  for (int c = 1; c < kNumClasses; ++c) EXPECT_EQ(w[static_cast<std::size_t>(c)] > 0, species.count(c) == 1) << c;
  for (double u : uniform_class_weights()) EXPECT_EQ(u, 1.0);
}

// PNG -------------------------------------------------------------------------

TEST(Png, RgbAndGrayRoundTrip) {
  TempDir dir("png");
  const TensorF img = synthesize_sample(small_spec(), 1, 5, 0).image;
  write_png_rgb(dir.path() / "a.png", img);
  const TensorF back = read_png_rgb(dir.path() / "a.png");
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_LE((back.vec() - img.vec()).cwiseAbs().maxCoeff(), 0.5F / 255.0F + 1e-6F);

  GrayImage g{3, 2, {0, 1, 2, 16, 200, 255}};
  write_png_gray(dir.path() / "g.png", g);
  const GrayImage gb = read_png_gray(dir.path() / "g.png");
  EXPECT_EQ(gb.height, 3);
  EXPECT_EQ(gb.width, 2);
  EXPECT_EQ(gb.pixels, g.pixels);

  TensorF heat({1, 1, 4, 4}, 0.5F);
  write_heatmap_png(dir.path() / "h.png", heat);
  EXPECT_EQ(read_png_rgb(dir.path() / "h.png").dim(1), 4);
  EXPECT_THROW(read_png_rgb(dir.path() / "missing.png"), IoError);
}
