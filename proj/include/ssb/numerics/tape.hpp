// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over whole-tensor primitives. Nodes are appended in
// execution order, so walking the node list backwards is a reverse
// topological order; backward() visits each recorded op exactly once.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ssb/numerics/tensor.hpp"

namespace ssb::numerics {

class Tape;

struct Var {
  std::uint32_t id = 0;
  std::uint64_t tape = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaves receive gradients; constants never do.
  Var leaf(Tensor value, bool trainable = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op result. `fn` runs during backward with the node's gradient
  // and must accumulate into the parents via accumulate().
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

  const Tensor& value(Var v) const;
  // Zero-shaped tensor if the node never received a gradient.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;

  // Adds `g` into the gradient of `v` if it requires one.
  void accumulate(Var v, const Tensor& g);
  // Direct access to the gradient buffer, allocating zeros on first use.
  Tensor& grad_buffer(Var v);

  // Throws invalid-state if `loss` is not a scalar recorded on this tape.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool owns(Var v) const { return v.tape == id_ && v.id < nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

namespace ops {

// x[n x k] * w[k x m]
Var matmul(Tape& t, Var x, Var w);
Var add(Tape& t, Var a, Var b);
// x[n x m] + b[m] broadcast over rows
Var add_bias(Tape& t, Var x, Var b);
Var scale(Tape& t, Var x, float s);
Var square(Tape& t, Var x);
// Sum of all elements -> scalar.
Var sum(Tape& t, Var x);
Var layernorm(Tape& t, Var x, Var gain, Var bias, float eps = 1e-5f);
Var gelu(Tape& t, Var x);
// Rows of table selected by ids.
Var embedding(Tape& t, Var table, std::span<const int> ids);
// Causal multi-head self-attention over q, k, v [n x d].
Var causal_attention(Tape& t, Var q, Var k, Var v, std::size_t heads);
Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end);
// Row-wise temperature softmax.
Var softmax_rows(Tape& t, Var x, float temperature);
// T^2 * mean_j KL(softmax(teacher_j/T) || softmax(student_j/T)).
Var kd_loss(Tape& t, const Tensor& teacher, Var student, float temperature);
// Mean cross-entropy over rows whose target is >= 0; rows with target < 0
// are masked out and receive zero gradient.
Var cross_entropy_rows(Tape& t, Var logits, std::span<const int> targets);
// Mean of scalar nodes.
Var mean(Tape& t, std::span<const Var> scalars);

}  // namespace ops

// Row primitives shared by the tape ops and the incremental decoder so that
// both paths produce bitwise-identical activations.
namespace rowops {

// out[m] = x[k] * w[k x m]
void linear(const float* x, std::size_t k, const float* w, std::size_t m, float* out);
// Returns 1/std; writes the normalized row to xhat when non-null.
float layernorm(const float* x, const float* gain, const float* bias, std::size_t d,
                float eps, float* out, float* xhat);
float gelu(float x);
float gelu_grad(float x);
// Attention for one query row over keys/values rows [0, n_keys).
// k and v are row-major with row stride d. probs receives heads x n_keys.
void attention(const float* q, const float* k, const float* v, std::size_t n_keys,
               std::size_t d, std::size_t heads, float* out, float* probs);

}  // namespace rowops

}  // namespace ssb::numerics
