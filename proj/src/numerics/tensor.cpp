// SPDX-License-Identifier: Apache-2.0
#include "ssb/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ssb/common/error.hpp"

namespace ssb::numerics {

std::size_t shape_numel(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape_)
    : shape(std::move(shape_)), data(shape_numel(shape), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (data.size() != shape_numel(shape))
    fail(Errc::invalid_argument, "tensor data size " + std::to_string(data.size()) +
                                     " does not match shape " + shape_str(shape));
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::fill(float v) { std::fill(data.begin(), data.end(), v); }

void check_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) fail(Errc::invalid_argument, what + " contains non-finite values");
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         (a.data.empty() ||
          std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

}  // namespace ssb::numerics
