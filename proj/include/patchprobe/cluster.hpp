#pragma once
// Cluster proposals from foreground regions (Output B) and the same
// proposals filtered by fruit-level aggregation checks (Output A).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchprobe/dataset.hpp"
#include "patchprobe/geometry.hpp"
#include "patchprobe/image.hpp"
#include "patchprobe/metrics.hpp"

namespace patchprobe {

inline constexpr std::size_t kMinComponentArea = 256;

struct Component {
  Box box;            // tight, half-open
  std::size_t area = 0;
  double center_x = 0.0;  // centroid of pixel centers
  double center_y = 0.0;
};

// 8-connected components in raster order of their first pixel.
std::vector<Component> label_components(const BinaryMask& mask);

// Tight box per component of at least min_area pixels.
std::vector<Box> region_to_boxes(const BinaryMask& mask, std::size_t min_area = kMinComponentArea);

struct Fruit {
  double center_x = 0.0;
  double center_y = 0.0;
  double area = 0.0;
  double diameter = 0.0;
  Box extent;
};

struct FruitEvidence {
  enum class Source { Detector, Components };
  Source source = Source::Detector;
  std::vector<Fruit> fruits;
};

// Diameter is the mean box side.
FruitEvidence evidence_from_boxes(const std::vector<Box>& boxes);
// Diameter is sqrt(area) * sqrt(4 / pi).
FruitEvidence evidence_from_mask(const BinaryMask& mask, std::size_t min_area = 1);

struct VerifyConfig {
  int min_fruits = 2;
  double compactness = 0.6;
  double rho = 2.0;

  void validate() const;  // throws ConfigError
};

struct ClusterProposal {
  Box roi;
  std::vector<std::size_t> members;
  double compactness = 0.0;
  bool connected = false;
  bool accepted = false;
  std::string reason;  // empty when accepted
};

// Checks run in order: member count, connectivity, compactness; the first
// failure is the recorded reason. Members are fruits whose centers lie in
// the closed roi.
ClusterProposal verify(const Box& roi, const FruitEvidence& evidence, const VerifyConfig& cfg);

struct PipelineOutput {
  std::vector<ClusterProposal> proposals;  // one per Output B box, same order
  std::vector<Box> boxes;                  // accepted, shrunk to member extent
};

std::vector<Box> pipeline_B(const BinaryMask& foreground);
PipelineOutput pipeline_A(const BinaryMask& foreground, const FruitEvidence& evidence, const VerifyConfig& cfg);

struct ABReport {
  DetScores a;
  DetScores b;
  std::size_t boxes_a = 0;
  std::size_t boxes_b = 0;
};

// map_report of each output against the cluster annotations.
ABReport compare_AB(const std::vector<DetPrediction>& output_a, const std::vector<DetPrediction>& output_b,
                    const AnnotationStore& cluster_gt);

}  // namespace patchprobe
