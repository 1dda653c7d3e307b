#include "patchprobe/losses.hpp"

#include <cmath>

#include "patchprobe/errors.hpp"

namespace patchprobe {

double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

namespace {

double smooth_l1_grad(double d) {
  if (d >= 1.0) return 1.0;
  if (d <= -1.0) return -1.0;
  return d;
}

}  // namespace

DetLoss loss_detection(const DetGrid& pred, const DetTargets& t, const LossWeights& w) {
  if (pred.grid_h != t.grid_h || pred.grid_w != t.grid_w || pred.num_classes != t.num_classes) {
    throw ShapeError("detection targets do not match the prediction grid");
  }
  const std::size_t n = static_cast<std::size_t>(pred.grid_h) * pred.grid_w;
  const int k = pred.num_classes;
  DetLoss out;
  out.grad_objectness = Tensor(1, pred.grid_h, pred.grid_w);
  out.grad_class = Tensor(k, pred.grid_h, pred.grid_w);
  out.grad_offsets = Tensor(4, pred.grid_h, pred.grid_w);

  const double* obj = pred.objectness_logits.v.data();
  for (std::size_t p = 0; p < n; ++p) {
    out.objectness += bce_with_logits(obj[p], t.objectness[p]);
    out.grad_objectness.v[p] = w.objectness * (sigmoid(obj[p]) - t.objectness[p]) / double(n);
  }
  out.objectness /= double(n);

  const std::size_t npos = t.positives();
  if (npos > 0) {
    const double inv = 1.0 / double(npos);
    for (std::size_t p = 0; p < n; ++p) {
      if (!t.positive[p]) continue;
      for (int c = 0; c < k; ++c) {
        const double z = pred.class_logits.v[c * n + p];
        const double y = c == t.class_index[p] ? 1.0 : 0.0;
        out.classification += bce_with_logits(z, y);
        out.grad_class.v[c * n + p] = w.classification * (sigmoid(z) - y) * inv;
      }
      for (int j = 0; j < 4; ++j) {
        const double d = pred.offsets.v[j * n + p] - t.offsets[j * n + p];
        out.box += smooth_l1(d);
        out.grad_offsets.v[j * n + p] = w.box * smooth_l1_grad(d) * inv;
      }
    }
    out.classification *= inv;
    out.box *= inv;
  }
  out.total = w.objectness * out.objectness + w.classification * out.classification + w.box * out.box;
  return out;
}

SegLoss loss_segmentation(const DenseMask& pred, const BinaryMask& gt, const LossWeights& w) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw ShapeError("segmentation target resolution differs from the prediction");
  }
  const std::size_t n = pred.logits.size();
  SegLoss out;
  out.grad_logits = Tensor(1, pred.height, pred.width);
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = gt.data[i] ? 1.0 : 0.0;
    const double p = pred.probabilities[i];
    out.bce += bce_with_logits(pred.logits[i], y);
    inter += p * y;
    psum += p;
    gsum += y;
  }
  out.bce /= double(n);
  const double denom = psum + gsum + 1.0;
  const double numer = 2.0 * inter + 1.0;
  out.dice = 1.0 - numer / denom;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = gt.data[i] ? 1.0 : 0.0;
    const double p = pred.probabilities[i];
    const double d_dice_dp = -(2.0 * y * denom - numer) / (denom * denom);
    out.grad_logits.v[i] = w.seg_bce * (p - y) / double(n) + w.seg_dice * d_dice_dp * p * (1.0 - p);
  }
  out.total = w.seg_bce * out.bce + w.seg_dice * out.dice;
  return out;
}

}  // namespace patchprobe
