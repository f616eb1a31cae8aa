// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssb/common/rng.hpp"
#include "ssb/lm/chat.hpp"
#include "ssb/lm/model.hpp"
#include "ssb/numerics/tape.hpp"

namespace ssb::lm {

// Per-answer-token logit rows: row j is the next-token distribution after the
// prompt and the first j answer tokens.
struct LogitSequence {
  std::uint64_t id = 0;
  Tensor logits;  // rows x vocab
  std::size_t rows() const { return logits.shape.empty() ? 0 : logits.rows(); }
  std::size_t vocab() const { return logits.shape.empty() ? 0 : logits.cols(); }
};

// Incremental decoder with a key/value cache. Feeding tokens one at a time
// produces the same rows, bit for bit, as the full-sequence graph.
class Decoder {
 public:
  explicit Decoder(const Model& model);

  // Consumes one token and returns the logits for the next position. Throws
  // sequence-too-long once the context is full.
  std::span<const float> step(int token);
  std::size_t position() const { return pos_; }
  std::size_t capacity() const { return static_cast<std::size_t>(model_.config().context); }

 private:
  void project(const float* x, const std::string& name, float* out);

  const Model& model_;
  std::size_t pos_ = 0;
  std::size_t d_, heads_, mlp_, vocab_;
  std::vector<std::vector<float>> kcache_, vcache_;
  std::vector<float> x_, h_, q_, k_, v_, att_, o_, u_, logits_, probs_, tmp_, lora_;
};

// n x vocab logits for a full sequence.
Tensor forward(const Model& model, std::span<const int> tokens);

// Teacher-forced rows over the assistant span of `messages`.
LogitSequence answer_logits(const Model& model, const ChatMessages& messages,
                            std::uint64_t id = 0);

struct SampleOptions {
  double temperature = 0.8;  // 0 selects argmax
  int max_new = 64;
  std::vector<int> stop;     // empty -> end-of-message
};

struct Generation {
  std::vector<int> tokens;  // without the stop token
  bool stopped = false;     // hit a stop token
  bool truncated = false;   // ran out of context before stopping
};

Generation sample(const Model& model, std::span<const int> prompt, const SampleOptions& opts,
                  Rng& rng);

// Index of the first maximal element.
int argmax(std::span<const float> row);

// Differentiable forward pass. Parameters are bound once per tape.
struct GraphParams {
  std::map<std::string, numerics::Var> vars;
  std::vector<std::pair<std::string, numerics::Var>> trainable;
};

GraphParams bind_params(numerics::Tape& tape, const Model& model, TrainScope scope);
numerics::Var forward_graph(numerics::Tape& tape, const Model& model, const GraphParams& params,
                            std::span<const int> tokens);
// Gradients for `params.trainable`, zero-filled where a tensor was unused.
std::vector<Tensor> collect_grads(const numerics::Tape& tape, const Model& model,
                                  const GraphParams& params);

}  // namespace ssb::lm
