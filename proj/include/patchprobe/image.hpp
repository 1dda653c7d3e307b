#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace patchprobe {

// 8-bit RGB raster, row-major, interleaved.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// 0/1 raster, row-major.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Integer label raster (0 = background).
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;
};

RgbImage read_rgb(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

// Any nonzero pixel is foreground.
BinaryMask read_mask(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

// 8- or 16-bit single channel label image.
LabelImage read_labels(const std::filesystem::path& path);

// Area-averaging when shrinking, bilinear when enlarging.
RgbImage resize(const RgbImage& image, int width, int height);
BinaryMask resize_nearest(const BinaryMask& mask, int width, int height);

RgbImage flip_horizontal(const RgbImage& image);
BinaryMask flip_horizontal(const BinaryMask& mask);

}  // namespace patchprobe
