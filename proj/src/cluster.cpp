#include "patchprobe/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <opencv2/imgproc.hpp>

#include "patchprobe/errors.hpp"

namespace patchprobe {

std::vector<Component> label_components(const BinaryMask& mask) {
  if (mask.width == 0 || mask.height == 0) return {};
  cv::Mat src(mask.height, mask.width, CV_8U, const_cast<std::uint8_t*>(mask.data.data()));
  cv::Mat bin = src != 0;
  cv::Mat labels;
  const int n = cv::connectedComponents(bin, labels, 8, CV_32S);
  std::vector<Component> comps(n > 0 ? n - 1 : 0);
  std::vector<double> sx(comps.size(), 0.0), sy(comps.size(), 0.0);
  std::vector<int> x0(comps.size(), mask.width), y0(comps.size(), mask.height), x1(comps.size(), -1),
      y1(comps.size(), -1);
  // Order components by their first pixel in raster order.
  std::vector<int> rank(n, -1);
  int next = 0;
  for (int y = 0; y < mask.height; ++y) {
    const int* row = labels.ptr<int>(y);
    for (int x = 0; x < mask.width; ++x) {
      const int l = row[x];
      if (l == 0) continue;
      if (rank[l] < 0) rank[l] = next++;
      const int c = rank[l];
      ++comps[c].area;
      sx[c] += x + 0.5;
      sy[c] += y + 0.5;
      x0[c] = std::min(x0[c], x);
      y0[c] = std::min(y0[c], y);
      x1[c] = std::max(x1[c], x);
      y1[c] = std::max(y1[c], y);
    }
  }
  for (std::size_t c = 0; c < comps.size(); ++c) {
    comps[c].box = Box{double(x0[c]), double(y0[c]), double(x1[c] - x0[c] + 1), double(y1[c] - y0[c] + 1)};
    comps[c].center_x = sx[c] / double(comps[c].area);
    comps[c].center_y = sy[c] / double(comps[c].area);
  }
  return comps;
}

std::vector<Box> region_to_boxes(const BinaryMask& mask, std::size_t min_area) {
  std::vector<Box> out;
  for (const auto& c : label_components(mask)) {
    if (c.area >= min_area) out.push_back(c.box);
  }
  return out;
}

FruitEvidence evidence_from_boxes(const std::vector<Box>& boxes) {
  FruitEvidence ev;
  ev.source = FruitEvidence::Source::Detector;
  for (const Box& b : boxes) {
    if (!b.valid()) continue;
    ev.fruits.push_back({b.center_x(), b.center_y(), b.area(), 0.5 * (b.w + b.h), b});
  }
  return ev;
}

FruitEvidence evidence_from_mask(const BinaryMask& mask, std::size_t min_area) {
  FruitEvidence ev;
  ev.source = FruitEvidence::Source::Components;
  const double k = std::sqrt(4.0 / std::numbers::pi);
  for (const auto& c : label_components(mask)) {
    if (c.area < min_area) continue;
    const double area = double(c.area);
    ev.fruits.push_back({c.center_x, c.center_y, area, std::sqrt(area) * k, c.box});
  }
  return ev;
}

void VerifyConfig::validate() const {
  if (min_fruits < 2) throw ConfigError("min_fruits must be >= 2");
  if (!(compactness >= 0.0)) throw ConfigError("compactness threshold must be >= 0");
  if (!(rho >= 0.0)) throw ConfigError("rho must be >= 0");
}

ClusterProposal verify(const Box& roi, const FruitEvidence& evidence, const VerifyConfig& cfg) {
  ClusterProposal p;
  p.roi = roi;
  const auto& fr = evidence.fruits;
  for (std::size_t i = 0; i < fr.size(); ++i) {
    if (fr[i].center_x >= roi.x && fr[i].center_x <= roi.x2() && fr[i].center_y >= roi.y &&
        fr[i].center_y <= roi.y2()) {
      p.members.push_back(i);
    }
  }
  const std::size_t m = p.members.size();
  const auto dist = [&](std::size_t a, std::size_t b) {
    return std::hypot(fr[a].center_x - fr[b].center_x, fr[a].center_y - fr[b].center_y);
  };

  if (m >= 2) {
    double diameter = 0.0;
    for (std::size_t i : p.members) diameter += fr[i].diameter;
    const double radius = cfg.rho * diameter / double(m);
    // Flood over the unit-disk graph from the first member.
    std::vector<char> seen(m, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t reached = 1;
    while (!stack.empty()) {
      const std::size_t a = stack.back();
      stack.pop_back();
      for (std::size_t b = 0; b < m; ++b) {
        if (!seen[b] && dist(p.members[a], p.members[b]) <= radius) {
          seen[b] = 1;
          ++reached;
          stack.push_back(b);
        }
      }
    }
    p.connected = reached == m;
    double sum = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a + 1; b < m; ++b) sum += dist(p.members[a], p.members[b]);
    }
    const double pairs = double(m) * double(m - 1) / 2.0;
    const double diag = std::hypot(roi.w, roi.h);
    p.compactness = diag > 0.0 ? (sum / pairs) / diag : 0.0;
  } else {
    p.connected = m == 1;
  }

  if (m < static_cast<std::size_t>(cfg.min_fruits)) {
    p.reason = "insufficient members";
  } else if (!p.connected) {
    p.reason = "disconnected";
  } else if (p.compactness > cfg.compactness) {
    p.reason = "not compact";
  } else {
    p.accepted = true;
  }
  return p;
}

std::vector<Box> pipeline_B(const BinaryMask& foreground) { return region_to_boxes(foreground); }

PipelineOutput pipeline_A(const BinaryMask& foreground, const FruitEvidence& evidence, const VerifyConfig& cfg) {
  cfg.validate();
  PipelineOutput out;
  for (const Box& roi : pipeline_B(foreground)) {
    ClusterProposal p = verify(roi, evidence, cfg);
    if (p.accepted) {
      double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
      for (std::size_t i : p.members) {
        const Box& e = evidence.fruits[i].extent;
        x0 = std::min(x0, e.x);
        y0 = std::min(y0, e.y);
        x1 = std::max(x1, e.x2());
        y1 = std::max(y1, e.y2());
      }
      out.boxes.push_back(Box{x0, y0, x1 - x0, y1 - y0});
    }
    out.proposals.push_back(std::move(p));
  }
  return out;
}

ABReport compare_AB(const std::vector<DetPrediction>& output_a, const std::vector<DetPrediction>& output_b,
                    const AnnotationStore& cluster_gt) {
  ABReport r;
  r.a = map_report(output_a, cluster_gt);
  r.b = map_report(output_b, cluster_gt);
  r.boxes_a = output_a.size();
  r.boxes_b = output_b.size();
  return r;
}

}  // namespace patchprobe
