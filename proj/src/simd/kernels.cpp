#include "patchprobe/simd/kernels.hpp"

#include <cstdlib>
#include <string_view>

namespace patchprobe::simd {

#if !defined(PATCHPROBE_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif
#if !defined(PATCHPROBE_HAVE_NEON)
const KernelTable* neon_kernels() { return nullptr; }
#endif

namespace {

const KernelTable& select() {
  if (const char* forced = std::getenv("PATCHPROBE_KERNELS")) {
    const std::string_view name(forced);
    if (name == "scalar") return scalar_kernels();
    if (name == "avx2" && avx2_kernels()) return *avx2_kernels();
    if (name == "neon" && neon_kernels()) return *neon_kernels();
  }
  if (const KernelTable* t = avx2_kernels()) return *t;
  if (const KernelTable* t = neon_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

const KernelTable& kernels() {
  static const KernelTable& active = select();
  return active;
}

}  // namespace patchprobe::simd
