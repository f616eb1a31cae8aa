// SPDX-License-Identifier: Apache-2.0
#include "ssb/numerics/optimizer.hpp"

#include <cmath>

#include "ssb/common/error.hpp"

namespace ssb::numerics {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  fail(Errc::invalid_argument, "unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

void optimizer_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
                    OptimizerState& state) {
  if (params.size() != grads.size())
    fail(Errc::invalid_argument, "optimizer_step: " + std::to_string(params.size()) +
                                     " params but " + std::to_string(grads.size()) + " grads");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i]->same_shape(*grads[i]))
      fail(Errc::invalid_argument, "optimizer_step: gradient " + std::to_string(i) +
                                       " shape " + shape_str(grads[i]->shape) +
                                       " != parameter shape " + shape_str(params[i]->shape));
  if (!(state.lr > 0.0)) fail(Errc::invalid_argument, "optimizer_step: lr must be > 0");

  ++state.step;
  if (state.kind == OptimizerKind::sgd) {
    const auto lr = static_cast<float>(state.lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->data;
      const auto& g = grads[i]->data;
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    }
    return;
  }

  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.m.size() != params.size())
    fail(Errc::invalid_argument, "optimizer_step: parameter count changed between steps");

  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data;
    const auto& g = grads[i]->data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    if (m.size() != p.size())
      fail(Errc::invalid_argument, "optimizer_step: moment shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      double upd = state.lr * mhat / (std::sqrt(vhat) + state.eps);
      if (state.weight_decay > 0.0) upd += state.lr * state.weight_decay * p[j];
      p[j] = static_cast<float>(p[j] - upd);
    }
  }
}

double global_norm(std::span<const Tensor* const> grads) {
  double s = 0.0;
  for (const auto* g : grads)
    for (float x : g->data) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

double clip_global_norm(std::span<Tensor* const> grads, double max_norm) {
  double s = 0.0;
  for (const auto* g : grads)
    for (float x : g->data) s += static_cast<double>(x) * x;
  const double norm = std::sqrt(s);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto f = static_cast<float>(max_norm / norm);
    for (auto* g : grads)
      for (float& x : g->data) x *= f;
  }
  return norm;
}

}  // namespace ssb::numerics
