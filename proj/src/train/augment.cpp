#include "weedsense/train/augment.hpp"

#include <algorithm>
#include <cmath>

#include "weedsense/core/random.hpp"

namespace weedsense {

void AugConfig::validate() const {
  if (!(scale_min > 0) || !(scale_max >= scale_min)) throw ConfigError("augmentation scale range must be positive");
  if (!(hflip_prob >= 0 && hflip_prob <= 1)) throw ConfigError("flip probability must lie in [0,1]");
  if (target_h < 1 || target_w < 1) throw ConfigError("augmentation target size must be positive");
}

nlohmann::json AugConfig::to_json() const {
  return {{"scale_min", scale_min}, {"scale_max", scale_max}, {"hflip_prob", hflip_prob},
          {"target_h", target_h},   {"target_w", target_w}};
}

Sample resize_sample(const Sample& s, Index h, Index w) {
  const Index sh = s.height(), sw = s.width();
  Sample out = s;
  out.image = TensorF({3, h, w});
  out.mask.assign(static_cast<std::size_t>(h * w), 0);
  const double fy = static_cast<double>(sh) / static_cast<double>(h);
  const double fx = static_cast<double>(sw) / static_cast<double>(w);
  for (Index y = 0; y < h; ++y) {
    const double syf = std::clamp((static_cast<double>(y) + 0.5) * fy - 0.5, 0.0, static_cast<double>(sh - 1));
    const Index y0 = static_cast<Index>(syf), y1 = std::min(y0 + 1, sh - 1);
    const double ty = syf - static_cast<double>(y0);
    const Index ny = std::min(static_cast<Index>((static_cast<double>(y) + 0.5) * fy), sh - 1);
    for (Index x = 0; x < w; ++x) {
      const double sxf = std::clamp((static_cast<double>(x) + 0.5) * fx - 0.5, 0.0, static_cast<double>(sw - 1));
      const Index x0 = static_cast<Index>(sxf), x1 = std::min(x0 + 1, sw - 1);
      const double tx = sxf - static_cast<double>(x0);
      for (Index c = 0; c < 3; ++c) {
        const float* src = s.image.data() + c * sh * sw;
        const double top = src[y0 * sw + x0] * (1 - tx) + src[y0 * sw + x1] * tx;
        const double bottom = src[y1 * sw + x0] * (1 - tx) + src[y1 * sw + x1] * tx;
        out.image[(c * h + y) * w + x] = static_cast<float>(top * (1 - ty) + bottom * ty);
      }
      const Index nx = std::min(static_cast<Index>((static_cast<double>(x) + 0.5) * fx), sw - 1);
      out.mask[static_cast<std::size_t>(y * w + x)] = s.mask[static_cast<std::size_t>(ny * sw + nx)];
    }
  }
  return out;
}

Sample hflip_sample(const Sample& s) {
  const Index h = s.height(), w = s.width();
  Sample out = s;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) out.image[(c * h + y) * w + x] = s.image[(c * h + y) * w + (w - 1 - x)];
      out.mask[static_cast<std::size_t>(y * w + x)] = s.mask[static_cast<std::size_t>(y * w + (w - 1 - x))];
    }
  return out;
}

Sample crop_or_pad(const Sample& s, Index y0, Index x0, Index h, Index w) {
  const Index sh = s.height(), sw = s.width();
  Sample out = s;
  out.image = TensorF({3, h, w});
  out.mask.assign(static_cast<std::size_t>(h * w), 0);
  for (Index y = 0; y < h; ++y) {
    const Index sy = y0 + y;
    if (sy < 0 || sy >= sh) continue;
    for (Index x = 0; x < w; ++x) {
      const Index sx = x0 + x;
      if (sx < 0 || sx >= sw) continue;
      for (Index c = 0; c < 3; ++c) out.image[(c * h + y) * w + x] = s.image[(c * sh + sy) * sw + sx];
      out.mask[static_cast<std::size_t>(y * w + x)] = s.mask[static_cast<std::size_t>(sy * sw + sx)];
    }
  }
  return out;
}

namespace {

// Offset of a target-sized window: inside the source when it is larger,
// placing the source inside the window (negative offset) when it is smaller.
Index window_offset(Rng& rng, Index source, Index target) {
  if (source >= target) return static_cast<Index>(rng.below(static_cast<std::uint64_t>(source - target + 1)));
  return -static_cast<Index>(rng.below(static_cast<std::uint64_t>(target - source + 1)));
}

}  // namespace

Sample augment(const Sample& s, const AugConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const Index h = std::max<Index>(1, std::llround(static_cast<double>(s.height()) * scale));
  const Index w = std::max<Index>(1, std::llround(static_cast<double>(s.width()) * scale));
  Sample out = resize_sample(s, h, w);
  const Index y0 = window_offset(rng, h, cfg.target_h);
  const Index x0 = window_offset(rng, w, cfg.target_w);
  out = crop_or_pad(out, y0, x0, cfg.target_h, cfg.target_w);
  if (rng.bernoulli(cfg.hflip_prob)) out = hflip_sample(out);
  return out;
}

}  // namespace weedsense
