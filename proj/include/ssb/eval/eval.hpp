// SPDX-License-Identifier: Apache-2.0
//
// Greedy pass@1, the hard-label SFT control, the hinted/hint-free premise
// probe and Table-style comparison reports.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssb/curation/curation.hpp"
#include "ssb/distill/distill.hpp"
#include "ssb/lm/model.hpp"
#include "ssb/task/task.hpp"

namespace ssb::eval {

struct DecodeConfig {
  int max_new = 96;
  lm::PromptTemplates templates;
};

struct QuestionRecord {
  std::uint64_t id = 0;
  std::string question;
  std::string answer;
  std::optional<std::string> parsed;
  bool correct = false;
  std::size_t completion_len = 0;  // generated tokens, end-of-message excluded
  bool truncated = false;          // no end-of-message within max_new
  bool overflow = false;           // prompt did not fit the context
  std::string response;

  bool operator==(const QuestionRecord&) const = default;
};

struct EvalReport {
  std::string model_tag;
  std::string benchmark_tag;
  std::size_t correct = 0;
  std::vector<QuestionRecord> records;

  std::size_t size() const { return records.size(); }
  double pass_at_1() const { return records.empty() ? 0.0 : static_cast<double>(correct) / records.size(); }
  double mean_completion_len() const;
};

// One greedy generation per question on the bare-question view.
EvalReport pass_at_1(const lm::Model& model, const std::vector<task::Problem>& benchmark,
                     const DecodeConfig& cfg, const std::string& model_tag,
                     const std::string& benchmark_tag);

// Recomputes correct / L from the indicator records.
double pass_at_1_from_records(const std::vector<QuestionRecord>& records);

std::string records_to_jsonl(const EvalReport& report);
EvalReport records_from_jsonl(const std::string& text);

struct PremiseResult {
  std::size_t n = 0;
  std::size_t hint_free_correct = 0;
  std::size_t hinted_correct = 0;
  double hint_free() const { return n ? static_cast<double>(hint_free_correct) / n : 0.0; }
  double hinted() const { return n ? static_cast<double>(hinted_correct) / n : 0.0; }
  double gap_points() const { return 100.0 * (hinted() - hint_free()); }
};

// Greedy accuracy with and without the refinement prompt. The hints are one
// faithful and one corrupted trace of the same problem.
PremiseResult premise_probe(const lm::Model& model, const std::vector<task::Problem>& problems,
                            const DecodeConfig& cfg, std::uint64_t seed);

struct SftResult {
  lm::Model model;
  std::vector<distill::TrainMetrics> history;
};

// Cross-entropy on the refined-solution tokens of the student view under the
// same adapters, batch size, epochs, learning rate and seed as distillation.
SftResult run_sft_baseline(const lm::Model& base, const std::vector<curation::CuratedPair>& pairs,
                           const lm::LoraConfig& lora, const distill::DistillConfig& cfg,
                           const distill::StepLog& log = {});

// Fraction of refined-solution tokens predicted by argmax on the student view.
double token_accuracy(const lm::Model& model, const std::vector<curation::CuratedPair>& pairs);

// "55.4%"
std::string format_percent(double fraction);

struct ComparisonTables {
  std::string csv;
  std::string text;
};

// Rows are model tags, columns benchmark tags, both in first-seen order,
// plus the mean generated length per model. Throws invalid-argument on a
// repeated (model, benchmark) pair.
ComparisonTables compare_report(const std::vector<EvalReport>& reports);
void compare_report(const std::vector<EvalReport>& reports, const std::filesystem::path& csv_path,
                    const std::filesystem::path& text_path);

// One-sided exact McNemar test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2),
// where wins counts questions only the candidate solves.
double mcnemar_one_sided(std::size_t wins, std::size_t losses);

struct PairedCounts {
  std::size_t wins = 0;    // candidate right, reference wrong
  std::size_t losses = 0;  // candidate wrong, reference right
};
// Throws invalid-argument if the reports cover different questions.
PairedCounts paired_counts(const EvalReport& candidate, const EvalReport& reference);

}  // namespace ssb::eval
