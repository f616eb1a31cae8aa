// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssb/numerics/tensor.hpp"

namespace ssb::numerics {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

// Adam constants follow Kingma & Ba: beta1 0.9, beta2 0.999, eps 1e-8.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to adam only
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

// One update. Moment buffers are created on the first call and must keep the
// parameter shapes afterwards.
void optimizer_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
                    OptimizerState& state);

double global_norm(std::span<const Tensor* const> grads);
// Rescales grads in place when their global norm exceeds max_norm; returns
// the norm before clipping.
double clip_global_norm(std::span<Tensor* const> grads, double max_norm);

}  // namespace ssb::numerics
