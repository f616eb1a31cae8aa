// SPDX-License-Identifier: Apache-2.0
#include "ssb/numerics/kernels.hpp"

namespace ssb::numerics {
namespace {

float dot_scalar(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(float a, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemv_acc_scalar(const float* x, std::size_t k, const float* w, std::size_t m,
                     float* out) {
  for (std::size_t p = 0; p < k; ++p) {
    const float a = x[p];
    const float* row = w + p * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += a * row[j];
  }
}

void gemv_t_acc_scalar(const float* dy, std::size_t m, const float* w, std::size_t k,
                       float* dx) {
  for (std::size_t p = 0; p < k; ++p) dx[p] += dot_scalar(dy, w + p * m, m);
}

void outer_acc_scalar(const float* x, std::size_t k, const float* dy, std::size_t m,
                      float* dw) {
  for (std::size_t p = 0; p < k; ++p) axpy_scalar(x[p], dy, dw + p * m, m);
}

constexpr KernelTable kScalar{SimdLevel::scalar, dot_scalar,        axpy_scalar,
                              gemv_acc_scalar,   gemv_t_acc_scalar, outer_acc_scalar};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

}  // namespace ssb::numerics
