#include "patchprobe/render.hpp"

#include <cmath>
#include <opencv2/imgproc.hpp>

#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace {

// Bit 0: GT, bit 1: prediction.
void mark_outline(std::vector<std::uint8_t>& code, int w, int h, const Box& b, std::uint8_t bit) {
  const int x0 = std::max(0, static_cast<int>(std::lround(b.x)));
  const int y0 = std::max(0, static_cast<int>(std::lround(b.y)));
  const int x1 = std::min(w, static_cast<int>(std::lround(b.x2()))) - 1;
  const int y1 = std::min(h, static_cast<int>(std::lround(b.y2()))) - 1;
  if (x1 < x0 || y1 < y0) return;
  for (int x = x0; x <= x1; ++x) {
    code[static_cast<std::size_t>(y0) * w + x] |= bit;
    code[static_cast<std::size_t>(y1) * w + x] |= bit;
  }
  for (int y = y0; y <= y1; ++y) {
    code[static_cast<std::size_t>(y) * w + x0] |= bit;
    code[static_cast<std::size_t>(y) * w + x1] |= bit;
  }
}

const std::uint8_t* color_of(std::uint8_t code) {
  switch (code) {
    case 1: return OverlayColors::gt;
    case 2: return OverlayColors::pred;
    default: return OverlayColors::both;
  }
}

}  // namespace

RgbImage render_overlay(const RgbImage& image, const OverlayLayer& pred, const OverlayLayer& gt) {
  const int w = image.width, h = image.height;
  for (const OverlayLayer* layer : {&pred, &gt}) {
    if (layer->mask && (layer->mask->width != w || layer->mask->height != h)) {
      throw ShapeError("overlay mask size differs from the image");
    }
  }
  RgbImage out(w, h + kLegendHeight);
  std::copy(image.pixels.begin(), image.pixels.end(), out.pixels.begin());

  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<std::uint8_t> fill(n, 0), line(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.mask && gt.mask->data[i]) fill[i] |= 1;
    if (pred.mask && pred.mask->data[i]) fill[i] |= 2;
  }
  for (const Box& b : gt.boxes) mark_outline(line, w, h, b, 1);
  for (const Box& b : pred.boxes) mark_outline(line, w, h, b, 2);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      std::uint8_t* px = out.at(x, y);
      if (fill[i]) {
        const std::uint8_t* c = color_of(fill[i]);
        for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>((px[k] + c[k] + 1) / 2);
      }
      if (line[i]) {
        const std::uint8_t* c = color_of(line[i]);
        for (int k = 0; k < 3; ++k) px[k] = c[k];
      }
    }
  }

  // Legend: swatch and label per color on a black band.
  cv::Mat band(kLegendHeight, w, CV_8UC3, out.at(0, h));
  band.setTo(cv::Scalar(0, 0, 0));
  const std::pair<const std::uint8_t*, const char*> entries[] = {
      {OverlayColors::gt, "GT"}, {OverlayColors::pred, "Pred"}, {OverlayColors::both, "Overlap"}};
  int x = 4;
  for (const auto& [c, label] : entries) {
    if (x + 12 > w) break;
    // Buffer is RGB; OpenCV only sees bytes here.
    const cv::Scalar color(c[0], c[1], c[2]);
    cv::rectangle(band, cv::Rect(x, 4, 12, 12), color, cv::FILLED);
    cv::putText(band, label, cv::Point(x + 16, 15), cv::FONT_HERSHEY_PLAIN, 0.9, cv::Scalar(255, 255, 255), 1,
                cv::LINE_8);
    x += 16 + 8 * static_cast<int>(std::char_traits<char>::length(label)) + 12;
  }
  return out;
}

}  // namespace patchprobe
