#pragma once

#include <functional>
#include <span>
#include <vector>

#include "patchprobe/decoders.hpp"
#include "patchprobe/image.hpp"

namespace patchprobe {

struct PostprocessConfig {
  double conf_threshold = 0.25;
  double nms_threshold = 0.5;
  int max_detections = 300;
  double mask_threshold = 0.5;

  void validate() const;  // throws ConfigError
};

// Greedy class-wise suppression. Candidates are visited by descending
// score, ties by ascending index; a candidate is dropped iff its IoU with an
// already kept box of the same class exceeds the threshold. Returns kept
// indices in visiting order.
std::vector<std::size_t> nms_with_iou(std::span<const double> scores, std::span<const int> classes,
                                      const std::function<double(std::size_t, std::size_t)>& iou,
                                      double threshold);

// Same procedure on boxes, using the batched IoU kernel.
std::vector<Detection> nms(std::span<const Detection> detections, double threshold);

// decode -> confidence filter -> NMS -> top-N; sorted by descending score.
std::vector<Detection> postprocess(const DetGrid& grid, const PostprocessConfig& cfg = {});
std::vector<Detection> postprocess(std::vector<Detection> decoded, const PostprocessConfig& cfg);

// Foreground iff probability >= threshold.
BinaryMask binarize(const DenseMask& mask, double threshold = 0.5);

}  // namespace patchprobe
