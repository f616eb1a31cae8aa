// SPDX-License-Identifier: Apache-2.0
//
// Full-parameter next-token training on chat documents. Only the assistant
// text and its closing end-of-message marker are supervised.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssb/lm/chat.hpp"
#include "ssb/lm/model.hpp"

namespace ssb::distill {

struct PretrainConfig {
  int epochs = 1;
  int batch = 16;
  double lr = 3e-3;
  int warmup = 100;           // linear warmup steps
  double min_lr_ratio = 0.1;  // cosine decay floor, relative to lr
  double clip = 1.0;          // global gradient norm; 0 disables
  double weight_decay = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PretrainRecord {
  int step = 0;
  int epoch = 0;
  double loss = 0;  // mean per supervised token over the batch
  double grad_norm = 0;
  double lr = 0;
  std::size_t tokens = 0;  // supervised tokens in the batch
  double ms = 0;
};

// Per-token targets for one chat: next token on rows covering the assistant
// text and end-of-message, -1 elsewhere.
std::vector<int> assistant_targets(const lm::EncodedChat& enc);

double learning_rate(const PretrainConfig& cfg, int step, int total_steps);

using PretrainLog = std::function<void(const PretrainRecord&)>;

std::vector<PretrainRecord> pretrain(lm::Model& model, const std::vector<lm::ChatMessages>& docs,
                                     const PretrainConfig& cfg, const PretrainLog& log = {});

// step,epoch,loss,grad_norm,lr,tokens; pretrain_timing_csv holds step,ms.
std::string pretrain_metrics_csv(const std::vector<PretrainRecord>& history);
std::string pretrain_timing_csv(const std::vector<PretrainRecord>& history);

// Deterministic in-place Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace ssb::distill
