#pragma once
// Principal components of pooled patch vectors and their RGB rendering.

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include "patchprobe/encoder.hpp"
#include "patchprobe/errors.hpp"
#include "patchprobe/image.hpp"

namespace patchprobe {

struct PcaModel {
  Eigen::VectorXd mean;              // (C)
  Eigen::MatrixXd components;        // (k, C), rows orthonormal
  std::vector<double> explained;     // fraction of total variance per row, descending
  bool fallback = false;             // degenerate input; projections render gray
};

// Thrown when every patch vector is identical. Carries a usable model.
class ZeroVarianceError : public Error {
 public:
  ZeroVarianceError(PcaModel fallback)
      : Error("all patch vectors are identical"), fallback_(std::move(fallback)) {}
  const PcaModel& fallback() const { return fallback_; }

 private:
  PcaModel fallback_;
};

using PatchFilter = std::function<bool(const PatchFeatureMap&, int row, int col)>;

// Pools every patch vector (or those passing the filter) and keeps the
// leading n_components directions. Each component is signed so that its
// largest-magnitude coordinate is positive. Needs at least 4 vectors.
PcaModel fit_pca(std::span<const PatchFeatureMap> maps, int n_components = 3,
                 const PatchFilter& filter = nullptr);

// Fit on raw rows (n, C); the same procedure without the map plumbing.
PcaModel fit_pca(const Eigen::MatrixXd& rows, int n_components = 3);

// (grid_h, grid_w) image of the first three projections, each channel
// min-max normalized to [0, 1]; a constant channel is 0.5.
struct PcaImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;  // interleaved

  double at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

PcaImage project_rgb(const PatchFeatureMap& map, const PcaModel& model);

// 8-bit raster, each patch replicated over a scale x scale block.
RgbImage to_image(const PcaImage& image, int scale = kPatchSize);

}  // namespace patchprobe
