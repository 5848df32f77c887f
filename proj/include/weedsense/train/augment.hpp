#pragma once

#include "weedsense/data/dataset.hpp"

namespace weedsense {

struct AugConfig {
  double scale_min = 0.5;
  double scale_max = 2.0;
  double hflip_prob = 0.5;
  Index target_h = 512;
  Index target_w = 512;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Bilinear image and nearest-neighbour mask resize to `h` x `w`.
Sample resize_sample(const Sample& s, Index h, Index w);
Sample hflip_sample(const Sample& s);
/// Window [y0, y0+h) x [x0, x0+w); cells outside the source are zero
/// (black image, background label).
Sample crop_or_pad(const Sample& s, Index y0, Index x0, Index h, Index w);

/// Random rescale, crop or pad to the target size, and horizontal flip. Labels
/// other than the mask are unchanged. A pure function of (sample, cfg, seed).
Sample augment(const Sample& s, const AugConfig& cfg, std::uint64_t seed);

}  // namespace weedsense
