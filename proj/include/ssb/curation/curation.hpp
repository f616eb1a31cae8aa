// SPDX-License-Identifier: Apache-2.0
//
// Self-curation of teacher/student pairs: K rollouts per problem, split by
// boxed-answer correctness, one correct and one most-common-wrong rollout
// shown to the model as hints, and the hinted refinement kept only when its
// boxed answer matches the ground truth.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssb/common/rng.hpp"
#include "ssb/lm/chat.hpp"
#include "ssb/lm/model.hpp"
#include "ssb/lm/prompts.hpp"
#include "ssb/task/task.hpp"

namespace ssb::curation {

struct Rollout {
  std::string text;
  std::optional<std::string> answer;
  std::uint64_t seed = 0;
  bool truncated = false;  // hit max_new or the context before end-of-message
};

struct PartitionedRollouts {
  std::vector<Rollout> correct;
  std::vector<Rollout> wrong;
};

// Wrong answers keyed by parsed answer; nullopt is the "no boxed answer" class.
using AnswerCounts = std::map<std::optional<std::string>, int>;

struct RepresentativePair {
  Rollout correct;
  Rollout wrong;
  std::size_t correct_index = 0;  // into PartitionedRollouts::correct
  std::size_t wrong_index = 0;    // into PartitionedRollouts::wrong
  AnswerCounts wrong_counts;
};

struct CuratedPair {
  std::uint64_t problem_id = 0;
  std::string question;
  std::string answer;
  lm::ChatMessages teacher;  // system, hinted user prompt, refined solution
  lm::ChatMessages student;  // system, bare question, refined solution
  std::string refined;

  bool operator==(const CuratedPair&) const = default;
};

struct CurationConfig {
  int K = 4;
  double T_roll = 0.8;
  std::uint64_t seed = 1;
  int max_new = 96;
  // Refinement samples per problem; the first one boxing the ground truth
  // is kept. More than one raises the acceptance count.
  int refine_attempts = 1;
  lm::PromptTemplates templates;

  // Throws config-error listing every violation.
  void validate() const;
};

std::vector<Rollout> generate_rollouts(const lm::Model& model, const task::Problem& problem,
                                       const CurationConfig& cfg);

PartitionedRollouts partition(const std::vector<Rollout>& rollouts, const std::string& answer);

AnswerCounts count_wrong_answers(const std::vector<Rollout>& wrong);

// Correct representative first, then the wrong one, from the same rng.
// Throws invalid-argument if either set is empty.
RepresentativePair select_representatives(const PartitionedRollouts& p, Rng& rng);

std::string build_ssb_prompt(const std::string& question, const std::string& correct,
                             const std::string& wrong, const lm::PromptTemplates& templates);

struct RefineAttempt {
  std::string text;
  std::optional<std::string> answer;
  bool truncated = false;
};

struct RefineResult {
  std::optional<std::string> accepted;
  std::vector<RefineAttempt> attempts;
};

RefineResult refine_and_filter(const lm::Model& model, const task::Problem& problem,
                               const std::string& ssb_prompt, const CurationConfig& cfg);

CuratedPair make_pair(const task::Problem& problem, const std::string& ssb_prompt,
                      const std::string& refined, const lm::PromptTemplates& templates);

enum class Outcome { accepted, all_correct, all_wrong, refine_reject, overflow };
std::string outcome_name(Outcome o);

struct ProblemLog {
  std::uint64_t problem_id = 0;
  std::string question;
  std::string answer;
  std::vector<Rollout> rollouts;
  Outcome outcome = Outcome::overflow;
  // Indices into `rollouts`; -1 when not selected.
  int correct_rollout = -1;
  int wrong_rollout = -1;
  std::vector<RefineAttempt> refinements;
  std::string reason;
};

struct CurationReport {
  int processed = 0;
  int all_correct_skips = 0;
  int all_wrong_skips = 0;
  int refine_rejects = 0;
  int overflow_skips = 0;
  int accepted = 0;
  std::vector<ProblemLog> log;

  bool balanced() const {
    return processed ==
           all_correct_skips + all_wrong_skips + refine_rejects + overflow_skips + accepted;
  }
};

struct CurationResult {
  std::vector<CuratedPair> pairs;  // ordered by problem id
  CurationReport report;
};

// Never aborts on a single problem; per-problem failures land in the report.
CurationResult curate_dataset(const lm::Model& model, const std::vector<task::Problem>& problems,
                              const CurationConfig& cfg);

// {problem_id, question, answer, teacher_messages, student_messages, refined_text}
std::string pairs_to_jsonl(const std::vector<CuratedPair>& pairs);
std::vector<CuratedPair> pairs_from_jsonl(const std::string& text);
// Counts plus the per-problem log with every rollout and refinement.
std::string report_to_json(const CurationReport& report);
CurationReport report_from_json(const std::string& text);

}  // namespace ssb::curation
