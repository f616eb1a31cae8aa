// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include <immintrin.h>

#include "ssb/numerics/kernels.hpp"

namespace ssb::numerics {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(float a, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void gemv_acc_avx2(const float* x, std::size_t k, const float* w, std::size_t m,
                   float* out) {
  std::size_t j = 0;
  // 32-wide column blocks keep four accumulators in registers across k.
  for (; j + 32 <= m; j += 32) {
    __m256 c0 = _mm256_loadu_ps(out + j);
    __m256 c1 = _mm256_loadu_ps(out + j + 8);
    __m256 c2 = _mm256_loadu_ps(out + j + 16);
    __m256 c3 = _mm256_loadu_ps(out + j + 24);
    const float* row = w + j;
    for (std::size_t p = 0; p < k; ++p, row += m) {
      const __m256 a = _mm256_set1_ps(x[p]);
      c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(row), c0);
      c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(row + 8), c1);
      c2 = _mm256_fmadd_ps(a, _mm256_loadu_ps(row + 16), c2);
      c3 = _mm256_fmadd_ps(a, _mm256_loadu_ps(row + 24), c3);
    }
    _mm256_storeu_ps(out + j, c0);
    _mm256_storeu_ps(out + j + 8, c1);
    _mm256_storeu_ps(out + j + 16, c2);
    _mm256_storeu_ps(out + j + 24, c3);
  }
  for (; j + 8 <= m; j += 8) {
    __m256 c = _mm256_loadu_ps(out + j);
    const float* row = w + j;
    for (std::size_t p = 0; p < k; ++p, row += m)
      c = _mm256_fmadd_ps(_mm256_set1_ps(x[p]), _mm256_loadu_ps(row), c);
    _mm256_storeu_ps(out + j, c);
  }
  for (; j < m; ++j) {
    float c = out[j];
    for (std::size_t p = 0; p < k; ++p) c += x[p] * w[p * m + j];
    out[j] = c;
  }
}

void gemv_t_acc_avx2(const float* dy, std::size_t m, const float* w, std::size_t k,
                     float* dx) {
  for (std::size_t p = 0; p < k; ++p) dx[p] += dot_avx2(dy, w + p * m, m);
}

void outer_acc_avx2(const float* x, std::size_t k, const float* dy, std::size_t m,
                    float* dw) {
  for (std::size_t p = 0; p < k; ++p) axpy_avx2(x[p], dy, dw + p * m, m);
}

constexpr KernelTable kAvx2{SimdLevel::avx2, dot_avx2,        axpy_avx2,
                            gemv_acc_avx2,   gemv_t_acc_avx2, outer_acc_avx2};

}  // namespace

const KernelTable* avx2_kernels() { return &kAvx2; }

}  // namespace ssb::numerics
