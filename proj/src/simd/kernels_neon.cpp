// NEON (AArch64) variants. Multiplies and adds are kept separate so the
// elementwise kernels round like the scalar reference.

#include <arm_neon.h>

#include "patchprobe/simd/kernels.hpp"

namespace patchprobe::simd {
namespace {

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  }
  double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void relu_neon(double* x, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t v = vld1q_f64(x + i);
    vst1q_f64(x + i, vbslq_f64(vcgtq_f64(v, zero), v, zero));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_neon(const double* act, double* grad, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const uint64x2_t mask = vcgtq_f64(vld1q_f64(act + i), zero);
    vst1q_f64(grad + i, vbslq_f64(mask, vld1q_f64(grad + i), zero));
  }
  for (; i < n; ++i) grad[i] = act[i] > 0.0 ? grad[i] : 0.0;
}

void adam_neon(double* p, const double* g, double* m, double* v, std::size_t n,
               const AdamStep& s) {
  const float64x2_t b1 = vdupq_n_f64(s.beta1);
  const float64x2_t b2 = vdupq_n_f64(s.beta2);
  const float64x2_t omb1 = vdupq_n_f64(1.0 - s.beta1);
  const float64x2_t omb2 = vdupq_n_f64(1.0 - s.beta2);
  const float64x2_t bc1 = vdupq_n_f64(s.bias_correction1);
  const float64x2_t bc2 = vdupq_n_f64(s.bias_correction2);
  const float64x2_t lr = vdupq_n_f64(s.lr);
  const float64x2_t eps = vdupq_n_f64(s.eps);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vg = vld1q_f64(g + i);
    const float64x2_t vm = vaddq_f64(vmulq_f64(b1, vld1q_f64(m + i)), vmulq_f64(omb1, vg));
    const float64x2_t vv =
        vaddq_f64(vmulq_f64(b2, vld1q_f64(v + i)), vmulq_f64(omb2, vmulq_f64(vg, vg)));
    vst1q_f64(m + i, vm);
    vst1q_f64(v + i, vv);
    const float64x2_t mhat = vdivq_f64(vm, bc1);
    const float64x2_t vhat = vdivq_f64(vv, bc2);
    const float64x2_t step = vmulq_f64(lr, vdivq_f64(mhat, vaddq_f64(vsqrtq_f64(vhat), eps)));
    vst1q_f64(p + i, vsubq_f64(vld1q_f64(p + i), step));
  }
  if (i < n) scalar_kernels().adam(p + i, g + i, m + i, v + i, n - i, s);
}

void iou_one_to_many_neon(const double box[4], const double* xs,
                          const double* ys, const double* ws, const double* hs,
                          double* out, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  const float64x2_t ax1 = vdupq_n_f64(box[0]);
  const float64x2_t ay1 = vdupq_n_f64(box[1]);
  const float64x2_t ax2 = vdupq_n_f64(box[0] + box[2]);
  const float64x2_t ay2 = vdupq_n_f64(box[1] + box[3]);
  const float64x2_t area_a = vdupq_n_f64(box[2] * box[3]);
  auto vmax = [](float64x2_t a, float64x2_t b) { return vbslq_f64(vcgtq_f64(a, b), a, b); };
  auto vmin = [](float64x2_t a, float64x2_t b) { return vbslq_f64(vcltq_f64(a, b), a, b); };
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t bx1 = vld1q_f64(xs + i);
    const float64x2_t by1 = vld1q_f64(ys + i);
    const float64x2_t bw = vld1q_f64(ws + i);
    const float64x2_t bh = vld1q_f64(hs + i);
    const float64x2_t bx2 = vaddq_f64(bx1, bw);
    const float64x2_t by2 = vaddq_f64(by1, bh);
    const float64x2_t iw = vmax(vsubq_f64(vmin(bx2, ax2), vmax(bx1, ax1)), zero);
    const float64x2_t ih = vmax(vsubq_f64(vmin(by2, ay2), vmax(by1, ay1)), zero);
    const float64x2_t inter = vmulq_f64(iw, ih);
    const float64x2_t uni = vsubq_f64(vaddq_f64(area_a, vmulq_f64(bw, bh)), inter);
    vst1q_f64(out + i, vbslq_f64(vcgtq_f64(uni, zero), vdivq_f64(inter, uni), zero));
  }
  if (i < n) {
    scalar_kernels().iou_one_to_many(box, xs + i, ys + i, ws + i, hs + i, out + i, n - i);
  }
}

}  // namespace

const KernelTable* neon_kernels() {
  static const KernelTable table{"neon",        axpy_neon,
                                 dot_neon,      relu_neon,
                                 relu_backward_neon, adam_neon,
                                 iou_one_to_many_neon};
  return &table;
}

}  // namespace patchprobe::simd
