#include "patchprobe/simd/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace patchprobe::simd {
namespace {

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void relu_scalar(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(const double* act, double* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad[i] = act[i] > 0.0 ? grad[i] : 0.0;
}

void adam_scalar(double* p, const double* g, double* m, double* v,
                 std::size_t n, const AdamStep& s) {
  const double one_minus_b1 = 1.0 - s.beta1;
  const double one_minus_b2 = 1.0 - s.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = s.beta1 * m[i] + one_minus_b1 * g[i];
    v[i] = s.beta2 * v[i] + one_minus_b2 * (g[i] * g[i]);
    const double mhat = m[i] / s.bias_correction1;
    const double vhat = v[i] / s.bias_correction2;
    p[i] = p[i] - s.lr * (mhat / (std::sqrt(vhat) + s.eps));
  }
}

void iou_one_to_many_scalar(const double box[4], const double* xs,
                            const double* ys, const double* ws,
                            const double* hs, double* out, std::size_t n) {
  const double ax2 = box[0] + box[2];
  const double ay2 = box[1] + box[3];
  const double area_a = box[2] * box[3];
  for (std::size_t i = 0; i < n; ++i) {
    const double bx2 = xs[i] + ws[i];
    const double by2 = ys[i] + hs[i];
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(box[0], xs[i]));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max(box[1], ys[i]));
    const double inter = iw * ih;
    const double uni = area_a + ws[i] * hs[i] - inter;
    out[i] = uni > 0.0 ? inter / uni : 0.0;
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar",        axpy_scalar,
                                 dot_scalar,      relu_scalar,
                                 relu_backward_scalar, adam_scalar,
                                 iou_one_to_many_scalar};
  return table;
}

}  // namespace patchprobe::simd
