#pragma once
// Data-parallel inner loops shared by the decoders, the optimizer and the
// box-overlap code. Every kernel has a scalar reference implementation and
// optional vector variants; the active table is picked once at startup.

#include <cstddef>
#include <string_view>

namespace patchprobe::simd {

struct AdamStep {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  std::string_view name;

  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // x[i] = max(x[i], 0)
  void (*relu)(double* x, std::size_t n);
  // grad[i] = activation[i] > 0 ? grad[i] : 0
  void (*relu_backward)(const double* activation, double* grad, std::size_t n);
  // In-place Adam update of params from grads with moment buffers m, v.
  void (*adam)(double* params, const double* grads, double* m, double* v,
               std::size_t n, const AdamStep& step);
  // out[i] = IoU of box (x, y, w, h) against the i-th box of the SoA arrays.
  void (*iou_one_to_many)(const double box[4], const double* xs,
                          const double* ys, const double* ws,
                          const double* hs, double* out, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Best available table, or the one named by PATCHPROBE_KERNELS
// ("scalar", "avx2", "neon") when set and usable.
const KernelTable& kernels();

}  // namespace patchprobe::simd
