#include "patchprobe/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "patchprobe/errors.hpp"

namespace patchprobe {

void SegConfusion::add(const BinaryMask& pred, const BinaryMask& gt, int k) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw ShapeError("prediction and ground-truth masks differ in resolution");
  }
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    tp[k] += p && g;
    fp[k] += p && !g;
    fn[k] += !p && g;
  }
}

namespace {

double pct(double num, double den) { return den > 0.0 ? 100.0 * num / den : 0.0; }

}  // namespace

SegScores seg_scores(const SegConfusion& c) {
  const std::uint64_t tp = std::accumulate(c.tp.begin(), c.tp.end(), std::uint64_t{0});
  const std::uint64_t fp = std::accumulate(c.fp.begin(), c.fp.end(), std::uint64_t{0});
  const std::uint64_t fn = std::accumulate(c.fn.begin(), c.fn.end(), std::uint64_t{0});
  if (tp + fp + fn == 0) return {100.0, 100.0, 100.0, 100.0};
  SegScores s;
  double iou_sum = 0.0;
  for (std::size_t k = 0; k < c.tp.size(); ++k) {
    iou_sum += pct(double(c.tp[k]), double(c.tp[k] + c.fp[k] + c.fn[k]));
  }
  s.miou = iou_sum / double(c.tp.size());
  s.dice = pct(2.0 * tp, 2.0 * tp + fp + fn);
  s.precision = pct(double(tp), double(tp + fp));
  s.recall = pct(double(tp), double(tp + fn));
  return s;
}

SegScores seg_metrics(std::span<const BinaryMask> pred, std::span<const BinaryMask> gt) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground-truth sets differ in size");
  SegConfusion c(1);
  for (std::size_t i = 0; i < pred.size(); ++i) c.add(pred[i], gt[i]);
  return seg_scores(c);
}

std::array<double, 10> iou_ladder() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
  return t;
}

MatchResult match_detections(std::span<const Box> preds, std::span<const Box> gts, double thr) {
  MatchResult m;
  m.pred_to_gt.assign(preds.size(), -1);
  m.pred_iou.assign(preds.size(), 0.0);
  m.gt_to_pred.assign(gts.size(), -1);
  std::vector<double> xs(gts.size()), ys(gts.size()), ws(gts.size()), hs(gts.size()), ious(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    xs[g] = gts[g].x;
    ys[g] = gts[g].y;
    ws[g] = gts[g].w;
    hs[g] = gts[g].h;
  }
  const auto& k = simd::kernels();
  for (std::size_t p = 0; p < preds.size(); ++p) {
    const double box[4] = {preds[p].x, preds[p].y, preds[p].w, preds[p].h};
    k.iou_one_to_many(box, xs.data(), ys.data(), ws.data(), hs.data(), ious.data(), gts.size());
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (m.gt_to_pred[g] >= 0) continue;
      if (ious[g] > best_iou) {
        best_iou = ious[g];
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= thr) {
      m.pred_to_gt[p] = best;
      m.pred_iou[p] = best_iou;
      m.gt_to_pred[best] = static_cast<int>(p);
    }
  }
  return m;
}

std::optional<double> average_precision(std::span<const RankedFlag> flags, std::size_t n_gt) {
  if (n_gt == 0) {
    if (flags.empty()) return std::nullopt;
    return 0.0;
  }
  std::vector<std::size_t> order(flags.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return flags[a].score > flags[b].score; });
  const std::size_t n = order.size();
  std::vector<std::size_t> cum_tp(n);
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += flags[order[i]].true_positive ? 1 : 0;
    cum_tp[i] = tp;
    precision[i] = double(tp) / double(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  // recall_i >= r/100  <=>  100 * tp_i >= r * n_gt  (exact)
  double sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t r = 0; r <= 100; ++r) {
    while (pos < n && 100 * cum_tp[pos] < r * n_gt) ++pos;
    if (pos < n) sum += precision[pos];
  }
  return sum / 101.0;
}

DetScores map_report(std::span<const DetPrediction> preds, const AnnotationStore& gt,
                     double conf_threshold, std::optional<std::vector<std::int64_t>> image_ids) {
  std::vector<std::int64_t> images = image_ids ? *image_ids : gt.image_ids();
  std::map<std::int64_t, std::size_t> image_pos;
  for (std::size_t i = 0; i < images.size(); ++i) image_pos[images[i]] = i;
  std::map<std::int64_t, std::size_t> class_pos;
  for (std::size_t k = 0; k < gt.categories.size(); ++k) class_pos[gt.categories[k].id] = k;
  const std::size_t n_cls = gt.categories.size();

  // [image][class] -> boxes
  std::vector<std::vector<std::vector<Box>>> gt_boxes(images.size(), std::vector<std::vector<Box>>(n_cls));
  std::vector<std::vector<std::vector<std::pair<double, Box>>>> pr(
      images.size(), std::vector<std::vector<std::pair<double, Box>>>(n_cls));
  std::vector<std::size_t> n_gt(n_cls, 0);
  for (const auto& inst : gt.instances) {
    auto ip = image_pos.find(inst.image_id);
    if (ip == image_pos.end()) continue;
    if (!inst.bbox) throw SchemaError("instance", inst.id, "ground truth without bbox");
    const std::size_t k = class_pos.at(inst.category_id);
    gt_boxes[ip->second][k].push_back(*inst.bbox);
    ++n_gt[k];
  }
  std::size_t n_preds = 0;
  for (const auto& p : preds) {
    if (!gt.find_image(p.image_id)) {
      throw SchemaError("prediction for image " + std::to_string(p.image_id) + " absent from ground truth");
    }
    auto kp = class_pos.find(p.category_id);
    if (kp == class_pos.end()) {
      throw SchemaError("prediction with unknown category " + std::to_string(p.category_id));
    }
    auto ip = image_pos.find(p.image_id);
    if (ip == image_pos.end()) continue;
    pr[ip->second][kp->second].emplace_back(p.score, p.bbox);
    ++n_preds;
  }
  const std::size_t total_gt = std::accumulate(n_gt.begin(), n_gt.end(), std::size_t{0});
  if (total_gt == 0 && n_preds == 0) return {100.0, 100.0, 100.0, 100.0, 100.0};

  for (auto& per_image : pr) {
    for (auto& list : per_image) {
      std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    }
  }

  const auto ladder = iou_ladder();
  std::array<double, 10> ap_sum{};
  std::array<std::size_t, 10> ap_count{};
  for (std::size_t k = 0; k < n_cls; ++k) {
    for (std::size_t t = 0; t < ladder.size(); ++t) {
      std::vector<RankedFlag> flags;
      for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& list = pr[i][k];
        std::vector<Box> boxes;
        for (const auto& [score, box] : list) boxes.push_back(box);
        const MatchResult m = match_detections(boxes, gt_boxes[i][k], ladder[t]);
        for (std::size_t p = 0; p < list.size(); ++p) {
          flags.push_back({list[p].first, m.pred_to_gt[p] >= 0});
        }
      }
      if (auto ap = average_precision(flags, n_gt[k])) {
        ap_sum[t] += *ap;
        ++ap_count[t];
      }
    }
  }
  // P/R/F1 use greedy matching among confident predictions only.
  std::size_t tp50 = 0, fp50 = 0;
  for (std::size_t k = 0; k < n_cls; ++k) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::vector<Box> boxes;
      for (const auto& [score, box] : pr[i][k]) {
        if (score >= conf_threshold) boxes.push_back(box);
      }
      const MatchResult m = match_detections(boxes, gt_boxes[i][k], ladder[0]);
      for (int g : m.pred_to_gt) (g >= 0 ? tp50 : fp50) += 1;
    }
  }

  DetScores s;
  const auto mean_ap = [&](std::size_t t) { return ap_count[t] ? 100.0 * ap_sum[t] / double(ap_count[t]) : 0.0; };
  s.map50 = mean_ap(0);
  double all = 0.0;
  for (std::size_t t = 0; t < ladder.size(); ++t) all += mean_ap(t);
  s.map = all / double(ladder.size());
  s.precision = pct(double(tp50), double(tp50 + fp50));
  s.recall = pct(double(tp50), double(total_gt));
  s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

nlohmann::json predictions_to_json(std::span<const DetPrediction> preds) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : preds) {
    out.push_back({{"image_id", p.image_id},
                   {"category_id", p.category_id},
                   {"bbox", {p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h}},
                   {"score", p.score}});
  }
  return out;
}

std::vector<DetPrediction> predictions_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw SchemaError("prediction file must be a JSON array");
  std::vector<DetPrediction> out;
  for (const auto& j : doc) {
    try {
      const auto b = j.at("bbox").get<std::vector<double>>();
      if (b.size() != 4) throw SchemaError("prediction bbox must have 4 numbers");
      out.push_back({j.at("image_id").get<std::int64_t>(), j.at("category_id").get<std::int64_t>(),
                     Box{b[0], b[1], b[2], b[3]}, j.at("score").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("malformed prediction record: ") + e.what());
    }
  }
  return out;
}

}  // namespace patchprobe
