#pragma once

#include <optional>
#include <vector>

#include "patchprobe/geometry.hpp"
#include "patchprobe/image.hpp"

namespace patchprobe {

struct OverlayColors {
  static constexpr std::uint8_t gt[3] = {0, 200, 0};
  static constexpr std::uint8_t pred[3] = {220, 0, 0};
  static constexpr std::uint8_t both[3] = {240, 220, 0};
};

inline constexpr int kLegendHeight = 20;

struct OverlayLayer {
  std::vector<Box> boxes;
  std::optional<BinaryMask> mask;
};

// Masks are blended at 50% (GT green, prediction red, overlap yellow); box
// outlines are 1 px at rounded coordinates, pixels on both outlines yellow.
// A legend band of kLegendHeight rows is appended below the image.
RgbImage render_overlay(const RgbImage& image, const OverlayLayer& pred, const OverlayLayer& gt);

}  // namespace patchprobe
