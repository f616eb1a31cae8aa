// Finite-difference gradient checking for tape primitives, shared by the
// unit and acceptance suites.
#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "ssb/numerics/tape.hpp"

namespace gradcheck {

using ssb::numerics::Tape;
using ssb::numerics::Tensor;
using ssb::numerics::Var;
namespace ops = ssb::numerics::ops;

inline Tensor randt(std::mt19937& g, std::vector<std::size_t> shape, float scale = 1.0f) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> d(0.0f, scale);
  for (auto& x : t.data) x = d(g);
  return t;
}

// Builds a graph from the given leaves and returns the scalar loss.
using Graph = std::function<Var(Tape&, std::vector<Var>&)>;

// Wraps an op output y into a scalar with a distinct random weight per
// element: sum(y * C). The product is a local op so the probe does not
// depend on the primitives under test.
inline Var probe(Tape& t, Var y, std::uint32_t seed) {
  std::mt19937 g(seed);
  const Tensor c = randt(g, t.value(y).shape);
  Tensor out = Tensor::scalar(0.0f);
  double s = 0;
  for (std::size_t i = 0; i < c.numel(); ++i) s += static_cast<double>(t.value(y).data[i]) * c.data[i];
  out.data[0] = static_cast<float>(s);
  Var parents[] = {y};
  return t.record(std::move(out), parents, [y, c](Tape& tp, const Tensor& go) {
    Tensor gy = c;
    for (auto& x : gy.data) x *= go.data[0];
    tp.accumulate(y, gy);
  });
}

inline double eval(std::vector<Tensor>& inputs, const Graph& f) {
  Tape t;
  std::vector<Var> vs;
  for (auto& x : inputs) vs.push_back(t.leaf(x));
  return t.value(f(t, vs)).data[0];
}

// Worst relative error between tape gradients and Richardson-extrapolated
// central differences over every element of every input. Below a magnitude
// of 0.1 the denominator is 0.1, since float32 evaluation noise dominates.
// The residual shrinks as h grows up to 4e-2, so it is round-off in the
// forward passes rather than truncation; Richardson removes the h^2 term.
inline double worst_error(std::vector<Tensor> inputs, const Graph& f, float h = 4e-2f) {
  Tape t;
  std::vector<Var> vs;
  for (auto& x : inputs) vs.push_back(t.leaf(x));
  t.backward(f(t, vs));
  double worst = 0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor& g = t.grad(vs[a]);
    if (g.numel() != inputs[a].numel()) return 1e30;
    for (std::size_t i = 0; i < inputs[a].numel(); ++i) {
      auto fn = [&] { return eval(inputs, f); };
      const double d1 = oracle::central_diff(inputs[a].data, i, fn, h);
      const double d2 = oracle::central_diff(inputs[a].data, i, fn, h / 2);
      const double fd = (4.0 * d2 - d1) / 3.0;
      worst = std::max(worst, oracle::rel_err(g.data[i], fd, 1e-1));
    }
  }
  return worst;
}

struct Case {
  std::string name;
  std::vector<Tensor> inputs;
  Graph graph;
};

// One case per tape primitive.
inline std::vector<Case> primitive_cases(std::uint32_t seed) {
  std::mt19937 g(seed);
  std::vector<Case> c;
  c.push_back({"matmul", {randt(g, {3, 4}), randt(g, {4, 5})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::matmul(t, v[0], v[1]), 1); }});
  c.push_back({"add", {randt(g, {3, 4}), randt(g, {3, 4})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::add(t, v[0], v[1]), 2); }});
  c.push_back({"add_bias", {randt(g, {3, 4}), randt(g, {4})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::add_bias(t, v[0], v[1]), 3); }});
  c.push_back({"scale", {randt(g, {2, 3})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::scale(t, v[0], -1.7f), 4); }});
  c.push_back({"square", {randt(g, {2, 3})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::square(t, v[0]), 5); }});
  c.push_back({"sum", {randt(g, {3, 2})}, [](Tape& t, std::vector<Var>& v) { return ops::sum(t, v[0]); }});
  c.push_back({"layernorm", {randt(g, {3, 6}), randt(g, {6}), randt(g, {6})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::layernorm(t, v[0], v[1], v[2]), 6); }});
  c.push_back({"gelu", {randt(g, {2, 7}, 2.0f)},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::gelu(t, v[0]), 7); }});
  c.push_back({"embedding", {randt(g, {5, 3})}, [](Tape& t, std::vector<Var>& v) {
                 const std::vector<int> ids{2, 0, 2, 3};
                 return probe(t, ops::embedding(t, v[0], ids), 8);
               }});
  c.push_back({"causal_attention", {randt(g, {4, 8}), randt(g, {4, 8}), randt(g, {4, 8})},
               [](Tape& t, std::vector<Var>& v) {
                 return probe(t, ops::causal_attention(t, v[0], v[1], v[2], 2), 9);
               }});
  c.push_back({"slice_rows", {randt(g, {5, 3})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::slice_rows(t, v[0], 1, 4), 10); }});
  c.push_back({"softmax_rows", {randt(g, {3, 5})},
               [](Tape& t, std::vector<Var>& v) { return probe(t, ops::softmax_rows(t, v[0], 1.5f), 11); }});
  const Tensor teacher = randt(g, {3, 6}, 2.0f);
  c.push_back({"kd_loss", {randt(g, {3, 6}, 2.0f)},
               [teacher](Tape& t, std::vector<Var>& v) { return ops::kd_loss(t, teacher, v[0], 2.0f); }});
  c.push_back({"cross_entropy_rows", {randt(g, {3, 5})}, [](Tape& t, std::vector<Var>& v) {
                 const std::vector<int> targets{1, -1, 4};
                 return ops::cross_entropy_rows(t, v[0], targets);
               }});
  c.push_back({"mean", {randt(g, {2, 2}), randt(g, {3})}, [](Tape& t, std::vector<Var>& v) {
                 std::vector<Var> s{probe(t, v[0], 12), probe(t, v[1], 13)};
                 return ops::mean(t, s);
               }});
  return c;
}

}  // namespace gradcheck
