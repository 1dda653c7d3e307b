#include "patchprobe/postprocess.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "patchprobe/errors.hpp"
#include "patchprobe/simd/kernels.hpp"

namespace patchprobe {

void PostprocessConfig::validate() const {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) throw ConfigError("conf threshold must lie in [0, 1]");
  if (!(nms_threshold > 0.0 && nms_threshold < 1.0)) throw ConfigError("NMS threshold must lie in (0, 1)");
  if (max_detections < 1) throw ConfigError("max detections must be >= 1");
  if (!(mask_threshold >= 0.0 && mask_threshold <= 1.0)) throw ConfigError("mask threshold must lie in [0, 1]");
}

namespace {

std::vector<std::size_t> score_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::vector<std::size_t> nms_with_iou(std::span<const double> scores, std::span<const int> classes,
                                      const std::function<double(std::size_t, std::size_t)>& iou,
                                      double threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i : score_order(scores)) {
    bool suppressed = false;
    for (std::size_t j : kept) {
      if (classes[j] == classes[i] && iou(i, j) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::vector<Detection> nms(std::span<const Detection> dets, double threshold) {
  std::vector<double> scores(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) scores[i] = dets[i].score;

  struct Kept {
    std::vector<double> xs, ys, ws, hs;
  };
  std::map<int, Kept> per_class;
  std::vector<double> ious;
  std::vector<Detection> out;
  const auto& k = simd::kernels();
  for (std::size_t i : score_order(scores)) {
    const Detection& d = dets[i];
    Kept& kept = per_class[d.class_index];
    ious.resize(kept.xs.size());
    const double box[4] = {d.box.x, d.box.y, d.box.w, d.box.h};
    k.iou_one_to_many(box, kept.xs.data(), kept.ys.data(), kept.ws.data(), kept.hs.data(),
                      ious.data(), kept.xs.size());
    if (std::any_of(ious.begin(), ious.end(), [threshold](double v) { return v > threshold; })) continue;
    kept.xs.push_back(d.box.x);
    kept.ys.push_back(d.box.y);
    kept.ws.push_back(d.box.w);
    kept.hs.push_back(d.box.h);
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> postprocess(std::vector<Detection> decoded, const PostprocessConfig& cfg) {
  cfg.validate();
  std::erase_if(decoded, [&](const Detection& d) {
    return d.score < cfg.conf_threshold || !(d.box.w > 0.0) || !(d.box.h > 0.0);
  });
  std::vector<Detection> kept = nms(decoded, cfg.nms_threshold);
  // nms already yields descending score order.
  if (kept.size() > static_cast<std::size_t>(cfg.max_detections)) kept.resize(cfg.max_detections);
  return kept;
}

std::vector<Detection> postprocess(const DetGrid& grid, const PostprocessConfig& cfg) {
  return postprocess(decode_boxes(grid), cfg);
}

BinaryMask binarize(const DenseMask& mask, double threshold) {
  BinaryMask out(mask.width, mask.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = mask.probabilities[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace patchprobe
