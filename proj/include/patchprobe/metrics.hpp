#pragma once
// Pixel-level segmentation metrics and COCO-style detection metrics.
// Every reported value is a percentage.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "patchprobe/dataset.hpp"
#include "patchprobe/geometry.hpp"
#include "patchprobe/image.hpp"

namespace patchprobe {

struct SegConfusion {
  std::vector<std::uint64_t> tp, fp, fn;  // per class

  explicit SegConfusion(int num_classes = 1) : tp(num_classes), fp(num_classes), fn(num_classes) {}
  void add(const BinaryMask& pred, const BinaryMask& gt, int class_index = 0);
};

struct SegScores {
  double miou = 0.0;
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Counts are pooled over the whole set before any ratio. A ratio with a
// zero denominator is 0, except that all scores are 100 when prediction and
// ground truth are empty everywhere.
SegScores seg_scores(const SegConfusion& confusion);
SegScores seg_metrics(std::span<const BinaryMask> pred, std::span<const BinaryMask> gt);

// IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> iou_ladder();

struct MatchResult {
  std::vector<int> pred_to_gt;  // -1 for false positives
  std::vector<double> pred_iou;
  std::vector<int> gt_to_pred;  // -1 for misses
};

// preds must already be sorted by descending score. Each prediction takes
// the unmatched GT of highest IoU (ties: lower GT index) if IoU >= threshold.
MatchResult match_detections(std::span<const Box> preds, std::span<const Box> gts, double iou_threshold);

struct RankedFlag {
  double score = 0.0;
  bool true_positive = false;
};

// 101-point interpolated AP from score-ranked TP/FP flags (stable sort, ties
// keep input order). nullopt when there is neither GT nor prediction;
// 0 when there are predictions but no GT.
std::optional<double> average_precision(std::span<const RankedFlag> flags, std::size_t n_gt);

struct DetPrediction {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  Box bbox;
  double score = 0.0;
};

struct DetScores {
  double map50 = 0.0;
  double map = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// AP over all predictions; P/R/F1 at IoU 0.5 over predictions scoring at
// least conf_threshold. Throws SchemaError for predictions naming images or
// categories absent from the GT store. When image_ids is given, only those
// images are evaluated.
DetScores map_report(std::span<const DetPrediction> preds, const AnnotationStore& gt,
                     double conf_threshold = 0.25,
                     std::optional<std::vector<std::int64_t>> image_ids = std::nullopt);

// COCO results JSON: [{"image_id", "category_id", "bbox", "score"}, ...]
nlohmann::json predictions_to_json(std::span<const DetPrediction> preds);
std::vector<DetPrediction> predictions_from_json(const nlohmann::json& doc);

}  // namespace patchprobe
