// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <string>

#include "ssb/common/error.hpp"
#include "ssb/numerics/kernels.hpp"

namespace ssb::numerics {

#if !defined(SSB_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool simd_available(SimdLevel level) {
  switch (level) {
    case SimdLevel::scalar:
      return true;
    case SimdLevel::avx2:
#if defined(SSB_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& kernels_for(SimdLevel level) {
  if (!simd_available(level))
    fail(Errc::invalid_argument,
         "SIMD level " + std::string(simd_level_name(level)) + " not available");
  return level == SimdLevel::avx2 ? *avx2_kernels() : scalar_kernels();
}

namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("SSB_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return &scalar_kernels();
    if (v == "avx2" && simd_available(SimdLevel::avx2)) return avx2_kernels();
  }
  if (simd_available(SimdLevel::avx2)) return avx2_kernels();
  return &scalar_kernels();
}

const KernelTable*& active() {
  static const KernelTable* table = pick_default();
  return table;
}

}  // namespace

const KernelTable& kernels() { return *active(); }

SimdLevel active_simd_level() { return active()->level; }

void set_simd_level(SimdLevel level) { active() = &kernels_for(level); }

std::string_view simd_level_name(SimdLevel level) {
  return level == SimdLevel::avx2 ? "avx2" : "scalar";
}

}  // namespace ssb::numerics
