// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ssb::numerics {

// Dense row-major f32 tensor. Most of the code base uses rank 1 and rank 2.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_);
  Tensor(std::vector<std::size_t> shape_, std::vector<float> data_);

  static Tensor zeros(std::initializer_list<std::size_t> shape_) {
    return Tensor(std::vector<std::size_t>(shape_));
  }
  static Tensor scalar(float v) { return Tensor({1}, {v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

  std::span<float> row(std::size_t i) { return {data.data() + i * cols(), cols()}; }
  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * cols(), cols()};
  }
  float& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  float at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  void fill(float v);
};

std::size_t shape_numel(std::span<const std::size_t> shape);
std::string shape_str(std::span<const std::size_t> shape);

// Throws invalid-argument naming `what` if any element is NaN/Inf.
void check_finite(const Tensor& t, const std::string& what);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace ssb::numerics
