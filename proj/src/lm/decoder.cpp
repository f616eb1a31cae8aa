// SPDX-License-Identifier: Apache-2.0
#include "ssb/lm/decoder.hpp"

#include <cmath>

#include "ssb/common/error.hpp"
#include "ssb/lm/tokenizer.hpp"
#include "ssb/numerics/kernels.hpp"
#include "ssb/numerics/prob.hpp"

namespace ssb::lm {

using numerics::Tape;
using numerics::Var;
namespace ops = numerics::ops;
namespace rowops = numerics::rowops;

namespace {
constexpr float kLnEps = 1e-5f;
}

Decoder::Decoder(const Model& model)
    : model_(model),
      d_(static_cast<std::size_t>(model.config().width)),
      heads_(static_cast<std::size_t>(model.config().heads)),
      mlp_(static_cast<std::size_t>(model.config().mlp)),
      vocab_(static_cast<std::size_t>(model.config().vocab)) {
  const auto L = static_cast<std::size_t>(model.config().layers);
  kcache_.assign(L, std::vector<float>(capacity() * d_));
  vcache_.assign(L, std::vector<float>(capacity() * d_));
  x_.resize(d_);
  h_.resize(d_);
  q_.resize(d_);
  att_.resize(d_);
  o_.resize(d_);
  u_.resize(mlp_);
  logits_.resize(vocab_);
  probs_.resize(heads_ * capacity());
  tmp_.resize(std::max(d_, mlp_));
  lora_.resize(std::max(d_, mlp_));
}

void Decoder::project(const float* x, const std::string& name, float* out) {
  const Tensor& w = model_.param(name);
  const std::size_t din = w.rows(), dout = w.cols();
  rowops::linear(x, din, w.data.data(), dout, out);
  if (const Adapter* ad = model_.adapter_for(name)) {
    const std::size_t r = ad->a.cols();
    rowops::linear(x, din, ad->a.data.data(), r, tmp_.data());
    rowops::linear(tmp_.data(), r, ad->b.data.data(), dout, lora_.data());
    const float s = model_.adapter_scale();
    for (std::size_t j = 0; j < dout; ++j) {
      const float scaled = lora_[j] * s;
      out[j] = out[j] + scaled;
    }
  }
}

std::span<const float> Decoder::step(int token) {
  if (pos_ >= capacity())
    fail(Errc::sequence_too_long, "sequence length " + std::to_string(pos_ + 1) +
                                      " exceeds context " + std::to_string(capacity()));
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_)
    fail(Errc::invalid_argument, "token id " + std::to_string(token) + " out of range");
  const auto tok = model_.param("tok_emb").row(static_cast<std::size_t>(token));
  const auto pe = model_.param("pos_emb").row(pos_);
  for (std::size_t j = 0; j < d_; ++j) x_[j] = tok[j] + pe[j];

  for (int l = 0; l < model_.config().layers; ++l) {
    auto P = [&](const char* s) -> const Tensor& { return model_.param(Model::layer_name(l, s)); };
    rowops::layernorm(x_.data(), P("ln1.g").data.data(), P("ln1.b").data.data(), d_, kLnEps,
                      h_.data(), nullptr);
    float* kc = kcache_[static_cast<std::size_t>(l)].data();
    float* vc = vcache_[static_cast<std::size_t>(l)].data();
    project(h_.data(), Model::layer_name(l, "wq"), q_.data());
    project(h_.data(), Model::layer_name(l, "wk"), kc + pos_ * d_);
    project(h_.data(), Model::layer_name(l, "wv"), vc + pos_ * d_);
    rowops::attention(q_.data(), kc, vc, pos_ + 1, d_, heads_, att_.data(), probs_.data());
    project(att_.data(), Model::layer_name(l, "wo"), o_.data());
    for (std::size_t j = 0; j < d_; ++j) x_[j] = x_[j] + o_[j];

    rowops::layernorm(x_.data(), P("ln2.g").data.data(), P("ln2.b").data.data(), d_, kLnEps,
                      h_.data(), nullptr);
    project(h_.data(), Model::layer_name(l, "w1"), u_.data());
    const auto& b1 = P("b1").data;
    for (std::size_t j = 0; j < mlp_; ++j) u_[j] = rowops::gelu(u_[j] + b1[j]);
    project(u_.data(), Model::layer_name(l, "w2"), o_.data());
    const auto& b2 = P("b2").data;
    for (std::size_t j = 0; j < d_; ++j) {
      const float y = o_[j] + b2[j];
      x_[j] = x_[j] + y;
    }
  }
  rowops::layernorm(x_.data(), model_.param("lnf.g").data.data(),
                    model_.param("lnf.b").data.data(), d_, kLnEps, h_.data(), nullptr);
  rowops::linear(h_.data(), d_, model_.param("w_out").data.data(), vocab_, logits_.data());
  ++pos_;
  return logits_;
}

Tensor forward(const Model& model, std::span<const int> tokens) {
  const auto ctx = static_cast<std::size_t>(model.config().context);
  if (tokens.size() > ctx)
    fail(Errc::sequence_too_long, "sequence length " + std::to_string(tokens.size()) +
                                      " exceeds context " + std::to_string(ctx));
  const auto V = static_cast<std::size_t>(model.config().vocab);
  Tensor out({tokens.size(), V});
  Decoder dec(model);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto row = dec.step(tokens[i]);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

LogitSequence answer_logits(const Model& model, const ChatMessages& messages, std::uint64_t id) {
  const auto enc = encode_chat(messages);
  LogitSequence seq;
  seq.id = id;
  const auto V = static_cast<std::size_t>(model.config().vocab);
  const std::size_t n = enc.answer_size();
  seq.logits = Tensor({n, V});
  if (n == 0) return seq;
  // Rows come from positions answer_begin-1 .. answer_end-2; the final answer
  // token is never fed.
  const std::size_t needed = enc.answer_end - 1;
  const auto ctx = static_cast<std::size_t>(model.config().context);
  if (needed > ctx)
    fail(Errc::sequence_too_long, "teacher-forced sequence length " + std::to_string(needed) +
                                      " exceeds context " + std::to_string(ctx));
  Decoder dec(model);
  for (std::size_t i = 0; i < needed; ++i) {
    auto row = dec.step(enc.tokens[i]);
    if (i + 1 >= enc.answer_begin) {
      const std::size_t j = i + 1 - enc.answer_begin;
      std::copy(row.begin(), row.end(), seq.logits.row(j).begin());
    }
  }
  return seq;
}

int argmax(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<int>(best);
}

Generation sample(const Model& model, std::span<const int> prompt, const SampleOptions& opts,
                  Rng& rng) {
  if (opts.max_new < 1) fail(Errc::invalid_argument, "max_new must be >= 1");
  if (opts.temperature < 0.0) fail(Errc::invalid_argument, "temperature must be >= 0");
  if (prompt.empty()) fail(Errc::invalid_argument, "empty prompt");
  const auto ctx = static_cast<std::size_t>(model.config().context);
  if (prompt.size() > ctx)
    fail(Errc::sequence_too_long, "prompt length " + std::to_string(prompt.size()) +
                                      " exceeds context " + std::to_string(ctx));
  std::vector<int> stop = opts.stop;
  if (stop.empty()) stop.push_back(Tokenizer::kEndOfMessage);

  Decoder dec(model);
  std::span<const float> row;
  for (int t : prompt) row = dec.step(t);
  Generation g;
  std::vector<double> lp(row.size());
  for (int i = 0; i < opts.max_new; ++i) {
    int next;
    if (opts.temperature == 0.0) {
      next = argmax(row);
    } else {
      numerics::log_softmax_t(row, opts.temperature, lp);
      const double u = rng.uniform();
      double acc = 0.0;
      next = static_cast<int>(lp.size()) - 1;
      for (std::size_t j = 0; j < lp.size(); ++j) {
        acc += std::exp(lp[j]);
        if (u < acc) {
          next = static_cast<int>(j);
          break;
        }
      }
    }
    if (std::find(stop.begin(), stop.end(), next) != stop.end()) {
      g.stopped = true;
      return g;
    }
    g.tokens.push_back(next);
    if (i + 1 == opts.max_new) break;
    if (dec.position() >= dec.capacity()) {
      g.truncated = true;
      return g;
    }
    row = dec.step(next);
  }
  return g;
}

GraphParams bind_params(Tape& tape, const Model& model, TrainScope scope) {
  GraphParams gp;
  const bool base_trainable = scope == TrainScope::base;
  for (const auto& n : model.param_names()) {
    const Var v = tape.leaf(model.param(n), base_trainable);
    gp.vars.emplace(n, v);
    if (base_trainable) gp.trainable.emplace_back(n, v);
  }
  for (const auto& [name, ad] : model.adapters()) {
    const bool t = scope == TrainScope::adapters;
    const Var a = tape.leaf(ad.a, t);
    const Var b = tape.leaf(ad.b, t);
    gp.vars.emplace("lora." + name + ".a", a);
    gp.vars.emplace("lora." + name + ".b", b);
    if (t) {
      gp.trainable.emplace_back("lora." + name + ".a", a);
      gp.trainable.emplace_back("lora." + name + ".b", b);
    }
  }
  return gp;
}

Var forward_graph(Tape& t, const Model& model, const GraphParams& gp,
                  std::span<const int> tokens) {
  const auto ctx = static_cast<std::size_t>(model.config().context);
  if (tokens.empty()) fail(Errc::invalid_argument, "empty token sequence");
  if (tokens.size() > ctx)
    fail(Errc::sequence_too_long, "sequence length " + std::to_string(tokens.size()) +
                                      " exceeds context " + std::to_string(ctx));
  auto P = [&](const std::string& n) { return gp.vars.at(n); };
  auto project = [&](Var x, const std::string& name) {
    Var y = ops::matmul(t, x, P(name));
    if (model.adapter_for(name)) {
      Var lo = ops::matmul(t, x, P("lora." + name + ".a"));
      lo = ops::matmul(t, lo, P("lora." + name + ".b"));
      y = ops::add(t, y, ops::scale(t, lo, model.adapter_scale()));
    }
    return y;
  };
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  Var x = ops::add(t, ops::embedding(t, P("tok_emb"), tokens),
                   ops::embedding(t, P("pos_emb"), positions));
  const auto heads = static_cast<std::size_t>(model.config().heads);
  for (int l = 0; l < model.config().layers; ++l) {
    auto N = [&](const char* s) { return Model::layer_name(l, s); };
    Var h = ops::layernorm(t, x, P(N("ln1.g")), P(N("ln1.b")), kLnEps);
    Var q = project(h, N("wq"));
    Var k = project(h, N("wk"));
    Var v = project(h, N("wv"));
    Var a = ops::causal_attention(t, q, k, v, heads);
    x = ops::add(t, x, project(a, N("wo")));
    h = ops::layernorm(t, x, P(N("ln2.g")), P(N("ln2.b")), kLnEps);
    Var u = ops::gelu(t, ops::add_bias(t, project(h, N("w1")), P(N("b1"))));
    x = ops::add(t, x, ops::add_bias(t, project(u, N("w2")), P(N("b2"))));
  }
  Var h = ops::layernorm(t, x, P("lnf.g"), P("lnf.b"), kLnEps);
  return ops::matmul(t, h, P("w_out"));
}

std::vector<Tensor> collect_grads(const Tape& tape, const Model& model, const GraphParams& gp) {
  (void)model;
  std::vector<Tensor> out;
  out.reserve(gp.trainable.size());
  for (const auto& [name, v] : gp.trainable) {
    const Tensor& g = tape.grad(v);
    out.push_back(g.shape.empty() ? Tensor::zeros_like(tape.value(v)) : g);
  }
  return out;
}

}  // namespace ssb::lm
