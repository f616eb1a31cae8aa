// SPDX-License-Identifier: Apache-2.0
//
// Inner-loop float kernels. Every kernel has a scalar reference version and,
// on x86-64, an AVX2+FMA version. The active table is picked once at startup
// from CPUID; SSB_SIMD=scalar|avx2 overrides the choice.
//
// Results differ between levels only by floating-point reassociation (FMA and
// lane-wise partial sums). Within one level, every kernel is deterministic and
// processes each output row independently of the others.
#pragma once

#include <cstddef>
#include <string_view>

namespace ssb::numerics {

enum class SimdLevel { scalar, avx2 };

struct KernelTable {
  SimdLevel level;
  float (*dot)(const float* a, const float* b, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(float a, const float* x, float* y, std::size_t n);
  // out[j] += sum_p x[p] * w[p*m + j]   (row vector times k x m matrix)
  void (*gemv_acc)(const float* x, std::size_t k, const float* w, std::size_t m, float* out);
  // dx[p] += sum_j dy[j] * w[p*m + j]   (row vector times transposed matrix)
  void (*gemv_t_acc)(const float* dy, std::size_t m, const float* w, std::size_t k, float* dx);
  // dw[p*m + j] += x[p] * dy[j]         (rank-1 update)
  void (*outer_acc)(const float* x, std::size_t k, const float* dy, std::size_t m, float* dw);
};

const KernelTable& scalar_kernels();
// nullptr when not compiled in.
const KernelTable* avx2_kernels();

bool simd_available(SimdLevel level);
const KernelTable& kernels_for(SimdLevel level);

// Currently active table.
const KernelTable& kernels();
SimdLevel active_simd_level();
// Not thread-safe; intended for tests and benchmarks.
void set_simd_level(SimdLevel level);

std::string_view simd_level_name(SimdLevel level);

}  // namespace ssb::numerics
