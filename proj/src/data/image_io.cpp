#include "weedsense/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

namespace weedsense {
namespace {

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, Index& h, Index& w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  h = img.height;
  w = img.width;
  return buf;
}

void write_png(const std::filesystem::path& path, png_uint_32 format, Index h, Index w,
               const std::vector<std::uint8_t>& buf) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.format = format;
  img.height = static_cast<png_uint_32>(h);
  img.width = static_cast<png_uint_32>(w);
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

TensorF read_png_rgb(const std::filesystem::path& path) {
  Index h = 0, w = 0;
  const auto buf = read_png(path, PNG_FORMAT_RGB, h, w);
  TensorF out({3, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        out[(c * h + y) * w + x] = static_cast<float>(buf[static_cast<std::size_t>((y * w + x) * 3 + c)]) / 255.0F;
      }
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const TensorF& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_png_rgb expects [3,H,W], got " + image.shape().str());
  const Index h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h * w * 3));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) buf[static_cast<std::size_t>((y * w + x) * 3 + c)] = quantize(image[(c * h + y) * w + x]);
  write_png(path, PNG_FORMAT_RGB, h, w, buf);
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  GrayImage g;
  g.pixels = read_png(path, PNG_FORMAT_GRAY, g.height, g.width);
  return g;
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& image) {
  if (static_cast<Index>(image.pixels.size()) != image.height * image.width) {
    throw DimensionError("gray image pixel count does not match its extents");
  }
  write_png(path, PNG_FORMAT_GRAY, image.height, image.width, image.pixels);
}

void write_heatmap_png(const std::filesystem::path& path, const TensorF& map) {
  if (map.numel() == 0 || (map.rank() != 2 && map.rank() != 4)) {
    throw DimensionError("heatmap must be [H,W] or [1,1,H,W], got " + map.shape().str());
  }
  const Index h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  if (h * w != map.numel()) throw DimensionError("heatmap must hold a single plane, got " + map.shape().str());
  TensorF rgb({3, h, w});
  for (Index p = 0; p < h * w; ++p) {
    const float v = std::clamp(map[p], 0.0F, 1.0F);
    rgb[p] = v;
    rgb[h * w + p] = 1.0F - std::abs(2.0F * v - 1.0F);
    rgb[2 * h * w + p] = 1.0F - v;
  }
  write_png_rgb(path, rgb);
}

}  // namespace weedsense
