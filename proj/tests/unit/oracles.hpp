// Independent reference implementations used only by tests. Direct
// summation in long double, no log-sum-exp tricks, no library code paths.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline std::vector<long double> softmax(const std::vector<float>& v, double T) {
  long double mx = v[0];
  for (float x : v) mx = std::max<long double>(mx, x);
  std::vector<long double> e(v.size());
  long double s = 0;
  // Shift by the max only to keep exp in range for extreme tests; the sum is
  // still a plain direct sum.
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(v[i] - mx) / T);
    s += e[i];
  }
  for (auto& x : e) x /= s;
  return e;
}

inline double kl(const std::vector<float>& a, const std::vector<float>& b, double T) {
  auto p = softmax(a, T);
  auto q = softmax(b, T);
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return static_cast<double>(s);
}

inline double cross_entropy(const std::vector<float>& v, std::size_t target) {
  auto p = softmax(v, 1.0);
  return static_cast<double>(-std::log(p[target]));
}

// T^2 * mean over rows of KL, rows given as vectors.
inline double kd_loss(const std::vector<std::vector<float>>& teacher,
                      const std::vector<std::vector<float>>& student, double T) {
  long double s = 0;
  for (std::size_t j = 0; j < teacher.size(); ++j) s += kl(teacher[j], student[j], T);
  return static_cast<double>(T * T * s / static_cast<long double>(teacher.size()));
}

// Central finite difference of f at x[i].
inline double central_diff(std::vector<float>& x, std::size_t i,
                           const std::function<double()>& f, float h) {
  const float orig = x[i];
  x[i] = orig + h;
  const double fp = f();
  x[i] = orig - h;
  const double fm = f();
  x[i] = orig;
  return (fp - fm) / (2.0 * static_cast<double>(h));
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
