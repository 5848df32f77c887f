#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "weedsense/core/tensor.hpp"

namespace weedsense {

/// 8-bit RGB PNG to [3,H,W] in [0,1].
TensorF read_png_rgb(const std::filesystem::path& path);
/// [3,H,W] clamped to [0,1] and quantized to 8 bits.
void write_png_rgb(const std::filesystem::path& path, const TensorF& image);

struct GrayImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

/// [H,W] or [1,1,H,W] map in [0,1] rendered with a blue-to-red ramp.
void write_heatmap_png(const std::filesystem::path& path, const TensorF& map);

}  // namespace weedsense
