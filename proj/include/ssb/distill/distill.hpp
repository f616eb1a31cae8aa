// SPDX-License-Identifier: Apache-2.0
//
// Adapter training against stored teacher logits. The objective per pair is
//
//   T^2 * (1/n) * sum_j KL(softmax(teacher_j / T) || softmax(student_j / T))
//
// over the n refined-solution tokens, with the student rows computed on the
// bare-question view. Batch loss is the mean over pairs in the batch.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ssb/curation/curation.hpp"
#include "ssb/lm/decoder.hpp"
#include "ssb/logits/store.hpp"
#include "ssb/numerics/optimizer.hpp"

namespace ssb::distill {

using lm::LogitSequence;

struct DistillConfig {
  double T_KD = 2.0;
  int batch = 4;
  int epochs = 3;
  double lr = 1e-3;
  numerics::OptimizerKind optimizer = numerics::OptimizerKind::adam;
  std::uint64_t seed = 1;
  // Weight of an extra hard-label term; 0 keeps the objective purely soft.
  double ce_weight = 0.0;
  double clip = 0.0;  // global gradient norm; 0 disables

  void validate() const;
};

struct TrainMetrics {
  int step = 0;
  double kd_loss = 0;  // batch objective (cross-entropy for the SFT control)
  double grad_norm = 0;
  double completion_len = 0;  // mean refined-solution tokens in the batch
  double ms = 0;
};

LogitSequence student_logit_sequence(const lm::Model& model, const curation::CuratedPair& pair);

// Throws invalid-argument on row or vocab mismatch. Zero rows give 0.
double kd_loss(const LogitSequence& teacher, const LogitSequence& student, double temperature);

// Builds the loss for item `index` on a fresh tape.
using ItemLoss = std::function<numerics::Var(numerics::Tape&, const lm::GraphParams&, std::size_t)>;
using StepLog = std::function<void(const TrainMetrics&)>;

// Shared epoch/batch loop for adapter training: per-epoch shuffle seeded by
// (seed, epoch), mean loss over batch members, one optimizer step per batch.
// Only adapter tensors are updated.
std::vector<TrainMetrics> train_adapters(lm::Model& model, const std::vector<std::size_t>& lengths,
                                         const DistillConfig& cfg, const ItemLoss& loss,
                                         const StepLog& log = {});

// Aborts before the first step, listing every pair id missing from the store.
std::vector<TrainMetrics> distill_train(lm::Model& model,
                                        const std::vector<curation::CuratedPair>& pairs,
                                        const logits::LogitStore& store, const DistillConfig& cfg,
                                        const StepLog& log = {});

// step,kd_loss,grad_norm,completion_len. Wall-clock time goes to
// timing_csv so that this file depends only on the inputs.
std::string metrics_csv(const std::vector<TrainMetrics>& history);
std::vector<TrainMetrics> metrics_from_csv(const std::string& text);
// step,ms
std::string timing_csv(const std::vector<TrainMetrics>& history);
void emit_metrics(const std::vector<TrainMetrics>& history, const std::filesystem::path& path);

// Trailing moving average of kd_loss ending at `step` (1-based), window w.
double moving_average(const std::vector<TrainMetrics>& history, std::size_t step, std::size_t w);

}  // namespace ssb::distill
