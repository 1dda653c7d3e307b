#include "patchprobe/pca.hpp"

#include <algorithm>
#include <cmath>

namespace patchprobe {

PcaModel fit_pca(const Eigen::MatrixXd& rows, int n_components) {
  const Eigen::Index n = rows.rows(), c = rows.cols();
  if (n < 4) throw ConfigError("PCA needs at least 4 patch vectors");
  if (n_components < 1) throw ConfigError("PCA needs at least one component");
  const int k = static_cast<int>(std::min<Eigen::Index>(n_components, c));

  PcaModel model;
  model.mean = rows.colwise().mean().transpose();
  bool identical = true;
  for (Eigen::Index i = 1; i < n && identical; ++i) identical = rows.row(i) == rows.row(0);
  if (identical) {
    model.components = Eigen::MatrixXd::Identity(k, c);
    model.explained.assign(k, 0.0);
    model.fallback = true;
    throw ZeroVarianceError(model);
  }

  const Eigen::MatrixXd centered = rows.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition did not converge");
  // Ascending eigenvalues; negative round-off is clamped.
  const Eigen::VectorXd values = solver.eigenvalues().cwiseMax(0.0);
  const double total = values.sum();
  model.components.resize(k, c);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd v = solver.eigenvectors().col(c - 1 - i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    model.components.row(i) = v.normalized().transpose();
    model.explained.push_back(total > 0.0 ? values(c - 1 - i) / total : 0.0);
  }
  return model;
}

PcaModel fit_pca(std::span<const PatchFeatureMap> maps, int n_components, const PatchFilter& filter) {
  if (maps.empty()) throw ConfigError("PCA needs at least one feature map");
  const int c = maps.front().channels;
  std::vector<std::pair<const PatchFeatureMap*, std::size_t>> where;
  for (const auto& m : maps) {
    if (m.channels != c) throw ShapeError("feature maps disagree on channel count");
    for (int r = 0; r < m.grid_h; ++r) {
      for (int col = 0; col < m.grid_w; ++col) {
        if (filter && !filter(m, r, col)) continue;
        where.emplace_back(&m, static_cast<std::size_t>(r) * m.grid_w + col);
      }
    }
  }
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(where.size()), c);
  for (std::size_t i = 0; i < where.size(); ++i) {
    const auto& [m, p] = where[i];
    const std::size_t plane = static_cast<std::size_t>(m->grid_h) * m->grid_w;
    for (int ch = 0; ch < c; ++ch) rows(Eigen::Index(i), ch) = m->data[ch * plane + p];
  }
  return fit_pca(rows, n_components);
}

PcaImage project_rgb(const PatchFeatureMap& map, const PcaModel& model) {
  if (map.channels != model.mean.size()) throw ShapeError("feature dimension differs from the PCA model");
  PcaImage out;
  out.width = map.grid_w;
  out.height = map.grid_h;
  const std::size_t n = static_cast<std::size_t>(map.grid_h) * map.grid_w;
  out.rgb.assign(n * 3, 0.5);
  if (model.fallback) return out;

  const int k = std::min<int>(3, static_cast<int>(model.components.rows()));
  std::vector<double> proj(n * 3, 0.0);
  Eigen::VectorXd x(map.channels);
  for (std::size_t p = 0; p < n; ++p) {
    for (int ch = 0; ch < map.channels; ++ch) x(ch) = double(map.data[ch * n + p]) - model.mean(ch);
    for (int i = 0; i < k; ++i) proj[p * 3 + i] = model.components.row(i).dot(x);
  }
  for (int i = 0; i < k; ++i) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t p = 0; p < n; ++p) {
      lo = std::min(lo, proj[p * 3 + i]);
      hi = std::max(hi, proj[p * 3 + i]);
    }
    if (!(hi > lo)) continue;
    for (std::size_t p = 0; p < n; ++p) out.rgb[p * 3 + i] = (proj[p * 3 + i] - lo) / (hi - lo);
  }
  return out;
}

RgbImage to_image(const PcaImage& image, int scale) {
  RgbImage out(image.width * scale, image.height * scale);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(image.at(x / scale, y / scale, c), 0.0, 1.0) * 255.0));
      }
    }
  }
  return out;
}

}  // namespace patchprobe
