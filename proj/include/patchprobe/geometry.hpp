#pragma once

#include <cmath>

#include "patchprobe/simd/kernels.hpp"

namespace patchprobe {

// Axis-aligned box in pixels: (x, y) is the top-left corner, extents are
// half-open, pixel (0, 0) is the top-left of the image.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
  bool valid() const { return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y); }

  friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union. Shared by NMS and evaluation; batch callers use
// the one-to-many kernel directly and get identical values.
inline double box_iou(const Box& a, const Box& b) {
  const double box[4] = {a.x, a.y, a.w, a.h};
  double out = 0.0;
  simd::kernels().iou_one_to_many(box, &b.x, &b.y, &b.w, &b.h, &out, 1);
  return out;
}

// Mirror a box about the vertical axis of an image of the given width.
inline Box flip_box(const Box& b, double image_width) {
  return Box{image_width - b.x - b.w, b.y, b.w, b.h};
}

}  // namespace patchprobe
