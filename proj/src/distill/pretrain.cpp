// SPDX-License-Identifier: Apache-2.0
#include "ssb/distill/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "ssb/common/error.hpp"
#include "ssb/common/rng.hpp"
#include "ssb/lm/decoder.hpp"
#include "ssb/lm/tokenizer.hpp"
#include "ssb/numerics/optimizer.hpp"

namespace ssb::distill {

using numerics::Tape;
using numerics::Tensor;

void PretrainConfig::validate() const {
  std::vector<std::string> errs;
  if (epochs < 1) errs.push_back("pretrain.epochs must be >= 1");
  if (batch < 1) errs.push_back("pretrain.batch must be >= 1");
  if (!(lr > 0)) errs.push_back("pretrain.lr must be > 0");
  if (warmup < 0) errs.push_back("pretrain.warmup must be >= 0");
  if (!(min_lr_ratio >= 0 && min_lr_ratio <= 1)) errs.push_back("pretrain.min_lr_ratio must be in [0, 1]");
  if (!(clip >= 0)) errs.push_back("pretrain.clip must be >= 0");
  if (!(weight_decay >= 0)) errs.push_back("pretrain.weight_decay must be >= 0");
  if (errs.empty()) return;
  std::string msg;
  for (const auto& e : errs) msg += (msg.empty() ? "" : "; ") + e;
  fail(Errc::config_error, msg);
}

std::vector<int> assistant_targets(const lm::EncodedChat& enc) {
  std::vector<int> t(enc.tokens.size(), -1);
  if (enc.answer_begin == 0) return t;
  // The end-of-message marker follows the assistant text when present.
  const std::size_t last = std::min(enc.answer_end, enc.tokens.size() - 1);
  for (std::size_t i = enc.answer_begin - 1; i < last; ++i) t[i] = enc.tokens[i + 1];
  return t;
}

double learning_rate(const PretrainConfig& cfg, int step, int total_steps) {
  if (cfg.warmup > 0 && step < cfg.warmup) return cfg.lr * (step + 1) / cfg.warmup;
  const double span = std::max(1, total_steps - cfg.warmup);
  const double progress = std::min(1.0, (step - cfg.warmup) / span);
  const double cosine = 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
  return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

std::vector<PretrainRecord> pretrain(lm::Model& model, const std::vector<lm::ChatMessages>& docs,
                                     const PretrainConfig& cfg, const PretrainLog& log) {
  cfg.validate();
  require(!docs.empty(), Errc::invalid_argument, "empty pretraining corpus");
  std::vector<lm::EncodedChat> encoded;
  encoded.reserve(docs.size());
  for (const auto& d : docs) encoded.push_back(lm::encode_chat(d));

  auto params = lm::trainable_params(model, lm::TrainScope::base);
  std::vector<Tensor*> ptrs;
  for (auto& [n, p] : params) ptrs.push_back(p);
  numerics::OptimizerState opt;
  opt.kind = numerics::OptimizerKind::adam;
  opt.weight_decay = cfg.weight_decay;

  const std::size_t B = static_cast<std::size_t>(cfg.batch);
  const int steps_per_epoch = static_cast<int>((docs.size() + B - 1) / B);
  const int total = steps_per_epoch * cfg.epochs;
  std::vector<PretrainRecord> history;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(docs.size(), derive_seed(cfg.seed, epoch));
    for (std::size_t start = 0; start < order.size(); start += B, ++step) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t end = std::min(order.size(), start + B);
      std::vector<Tensor> grads;
      double loss_sum = 0;
      std::size_t tokens = 0;
      for (std::size_t s = start; s < end; ++s) {
        const auto& enc = encoded[order[s]];
        const auto targets = assistant_targets(enc);
        std::size_t n = 0;
        for (int t : targets) n += t >= 0;
        if (n == 0) continue;
        Tape tape;
        auto gp = lm::bind_params(tape, model, lm::TrainScope::base);
        auto logits = lm::forward_graph(tape, model, gp, enc.tokens);
        auto loss = numerics::ops::cross_entropy_rows(tape, logits, targets);
        tape.backward(loss);
        // cross_entropy_rows averages per sequence; weight by token count so
        // the batch loss is a per-token mean.
        const float w = static_cast<float>(n);
        loss_sum += tape.value(loss).data[0] * w;
        tokens += n;
        auto g = lm::collect_grads(tape, model, gp);
        if (grads.empty()) {
          grads = std::move(g);
          for (auto& t : grads)
            for (auto& x : t.data) x *= w;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < g[i].numel(); ++j) grads[i].data[j] += w * g[i].data[j];
        }
      }
      if (tokens == 0) continue;
      const float inv = 1.0f / static_cast<float>(tokens);
      std::vector<Tensor*> gptr;
      for (auto& t : grads) {
        for (auto& x : t.data) x *= inv;
        gptr.push_back(&t);
      }
      PretrainRecord rec;
      rec.grad_norm = cfg.clip > 0 ? numerics::clip_global_norm(gptr, cfg.clip)
                                   : numerics::global_norm(std::vector<const Tensor*>(gptr.begin(), gptr.end()));
      opt.lr = learning_rate(cfg, step, total);
      std::vector<const Tensor*> cg(gptr.begin(), gptr.end());
      numerics::optimizer_step(ptrs, cg, opt);
      rec.step = step;
      rec.epoch = epoch;
      rec.loss = loss_sum / tokens;
      rec.lr = opt.lr;
      rec.tokens = tokens;
      rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      history.push_back(rec);
      if (log) log(rec);
    }
  }
  return history;
}

std::string pretrain_metrics_csv(const std::vector<PretrainRecord>& history) {
  std::string out = "step,epoch,loss,grad_norm,lr,tokens\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%zu\n", r.step, r.epoch, r.loss,
                  r.grad_norm, r.lr, r.tokens);
    out += buf;
  }
  return out;
}

std::string pretrain_timing_csv(const std::vector<PretrainRecord>& history) {
  std::string out = "step,ms\n";
  char buf[64];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.1f\n", r.step, r.ms);
    out += buf;
  }
  return out;
}

}  // namespace ssb::distill
