// AVX2 variants. Built with -mavx2 only (no FMA) so that every elementwise
// kernel rounds exactly like the scalar reference.

#include <immintrin.h>

#include "patchprobe/simd/kernels.hpp"

namespace patchprobe::simd {
namespace {

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_loadu_pd(y + i);
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(vy, prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  acc0 = _mm256_add_pd(acc0, acc1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc0);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void relu_avx2(double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* act, double* grad, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(act + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(grad + i, _mm256_and_pd(mask, _mm256_loadu_pd(grad + i)));
  }
  for (; i < n; ++i) grad[i] = act[i] > 0.0 ? grad[i] : 0.0;
}

void adam_avx2(double* p, const double* g, double* m, double* v, std::size_t n,
               const AdamStep& s) {
  const __m256d b1 = _mm256_set1_pd(s.beta1);
  const __m256d b2 = _mm256_set1_pd(s.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - s.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - s.beta2);
  const __m256d bc1 = _mm256_set1_pd(s.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(s.bias_correction2);
  const __m256d lr = _mm256_set1_pd(s.lr);
  const __m256d eps = _mm256_set1_pd(s.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vg = _mm256_loadu_pd(g + i);
    const __m256d vm = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(omb1, vg));
    const __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(vg, vg)));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_div_pd(vm, bc1);
    const __m256d vhat = _mm256_div_pd(vv, bc2);
    const __m256d step =
        _mm256_mul_pd(lr, _mm256_div_pd(mhat, _mm256_add_pd(_mm256_sqrt_pd(vhat), eps)));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  if (i < n) {
    scalar_kernels().adam(p + i, g + i, m + i, v + i, n - i, s);
  }
}

void iou_one_to_many_avx2(const double box[4], const double* xs,
                          const double* ys, const double* ws, const double* hs,
                          double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d ax1 = _mm256_set1_pd(box[0]);
  const __m256d ay1 = _mm256_set1_pd(box[1]);
  const __m256d ax2 = _mm256_set1_pd(box[0] + box[2]);
  const __m256d ay2 = _mm256_set1_pd(box[1] + box[3]);
  const __m256d area_a = _mm256_set1_pd(box[2] * box[3]);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d bx1 = _mm256_loadu_pd(xs + i);
    const __m256d by1 = _mm256_loadu_pd(ys + i);
    const __m256d bw = _mm256_loadu_pd(ws + i);
    const __m256d bh = _mm256_loadu_pd(hs + i);
    const __m256d bx2 = _mm256_add_pd(bx1, bw);
    const __m256d by2 = _mm256_add_pd(by1, bh);
    // Operand order mirrors std::min / std::max in the scalar path.
    const __m256d iw = _mm256_max_pd(
        _mm256_sub_pd(_mm256_min_pd(bx2, ax2), _mm256_max_pd(bx1, ax1)), zero);
    const __m256d ih = _mm256_max_pd(
        _mm256_sub_pd(_mm256_min_pd(by2, ay2), _mm256_max_pd(by1, ay1)), zero);
    const __m256d inter = _mm256_mul_pd(iw, ih);
    const __m256d uni = _mm256_sub_pd(_mm256_add_pd(area_a, _mm256_mul_pd(bw, bh)), inter);
    const __m256d positive = _mm256_cmp_pd(uni, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(positive, _mm256_div_pd(inter, uni)));
  }
  if (i < n) {
    scalar_kernels().iou_one_to_many(box, xs + i, ys + i, ws + i, hs + i, out + i, n - i);
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const bool supported = __builtin_cpu_supports("avx2");
  static const KernelTable table{"avx2",        axpy_avx2,
                                 dot_avx2,      relu_avx2,
                                 relu_backward_avx2, adam_avx2,
                                 iou_one_to_many_avx2};
  return supported ? &table : nullptr;
}

}  // namespace patchprobe::simd
