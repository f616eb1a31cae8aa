// SPDX-License-Identifier: Apache-2.0
#include "ssb/numerics/prob.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ssb/common/error.hpp"

namespace ssb::numerics {
namespace {

void check_inputs(std::span<const float> v, double temperature, const char* what) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    fail(Errc::invalid_argument, std::string(what) + ": temperature must be > 0");
  if (v.empty()) fail(Errc::invalid_argument, std::string(what) + ": empty logits");
  for (float x : v)
    if (!std::isfinite(x))
      fail(Errc::invalid_argument, std::string(what) + ": non-finite logit");
}

}  // namespace

double log_softmax_t(std::span<const float> logits, double temperature,
                     std::span<double> out) {
  check_inputs(logits, temperature, "log_softmax_t");
  if (out.size() != logits.size())
    fail(Errc::invalid_argument, "log_softmax_t: output size mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<double>(logits[i]) / temperature;
    mx = std::max(mx, out[i]);
  }
  double sum = 0.0;
  for (double z : out) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  for (double& z : out) z -= lse;
  return lse;
}

std::vector<float> softmax_t(std::span<const float> logits, double temperature) {
  std::vector<double> lp(logits.size());
  log_softmax_t(logits, temperature, lp);
  std::vector<float> p(logits.size());
  for (std::size_t i = 0; i < lp.size(); ++i) p[i] = static_cast<float>(std::exp(lp[i]));
  return p;
}

double kl_from_logits(std::span<const float> teacher, std::span<const float> student,
                      double temperature) {
  if (teacher.size() != student.size())
    fail(Errc::invalid_argument, "kl_from_logits: length mismatch (" +
                                     std::to_string(teacher.size()) + " vs " +
                                     std::to_string(student.size()) + ")");
  if (teacher.size() < 2) fail(Errc::invalid_argument, "kl_from_logits: need length >= 2");
  std::vector<double> lp(teacher.size()), lq(student.size());
  log_softmax_t(teacher, temperature, lp);
  log_softmax_t(student, temperature, lq);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double p = std::exp(lp[i]);
    if (p == 0.0) continue;
    kl += p * (lp[i] - lq[i]);
  }
  return kl < 0.0 ? 0.0 : kl;
}

double cross_entropy(std::span<const float> logits, std::size_t target) {
  if (target >= logits.size())
    fail(Errc::invalid_argument, "cross_entropy: target " + std::to_string(target) +
                                     " out of range for " + std::to_string(logits.size()) +
                                     " logits");
  std::vector<double> lp(logits.size());
  log_softmax_t(logits, 1.0, lp);
  return -lp[target];
}

}  // namespace ssb::numerics
