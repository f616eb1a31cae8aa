// SPDX-License-Identifier: Apache-2.0
//
// Integer arithmetic chains such as "((3-7)*2)+5", evaluated left to right.
// Solutions are written one step per line and end in a boxed answer:
//
//   3-7=-4
//   -4*2=-8
//   -8+5=-3
//   \boxed{-3}
//
// A "trap" step is a subtraction whose left operand is non-negative and whose
// result is negative. The pretraining corpus makes sign-drop mistakes on trap
// steps common in hint-free solutions and rare in refinement documents.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssb/common/rng.hpp"
#include "ssb/lm/chat.hpp"
#include "ssb/lm/prompts.hpp"

namespace ssb::task {

inline constexpr int kMinDifficulty = 2;
inline constexpr int kMaxDifficulty = 4;
inline constexpr int kMaxOperand = 9;
// Every intermediate value of a generated problem stays within +-kValueBound.
inline constexpr int kValueBound = 99;

struct Problem {
  std::uint64_t id = 0;
  std::string question;
  std::string answer;  // canonical integer string
  int difficulty = 0;  // number of operators
  std::vector<int> operands;
  std::string ops;  // one of '+', '-', '*' per step

  bool operator==(const Problem&) const = default;
};

std::int64_t apply_op(char op, std::int64_t a, std::int64_t b);
// Values after each step (difficulty entries).
std::vector<std::int64_t> chain_values(const Problem& p);

// Builds question, answer and id from the chain. Throws invalid-argument on
// malformed chains.
Problem make_problem(std::vector<int> operands, std::string ops);
// Inverse of the question rendering. Throws invalid-argument.
Problem parse_question(const std::string& question);

std::uint64_t problem_id(const std::string& question);
std::string id_hex(std::uint64_t id);
std::uint64_t parse_id_hex(const std::string& s);

// Train/benchmark split keyed by problem id.
enum class Partition { train, benchmark };
Partition partition_of(std::uint64_t id, std::uint64_t split_seed);

// Uniform operators and operands; redraws chains leaving the value bound.
Problem gen_problem(Rng& rng, int difficulty);
// Redraws until the problem falls into `part`.
Problem gen_problem(Rng& rng, int difficulty, Partition part, std::uint64_t split_seed);

// Index of the first trap step, if any.
std::optional<int> first_trap_step(const Problem& p);

enum class ErrorKind { none, sign_drop, slip };

struct Trace {
  std::string text;
  std::string answer;  // boxed answer written in the trace
  ErrorKind error = ErrorKind::none;
  int error_step = -1;
};

// Faithful trace: every step correct.
Trace render_trace(const Problem& p);
// One corrupted step, propagated downstream. Trap problems drop the sign at
// their first trap step; other problems slip the result of a random step by
// a small offset. The boxed answer always differs from the ground truth.
Trace render_trace(const Problem& p, Rng& rng);

struct CorpusSpec {
  int direct_docs = 50000;
  int refine_docs = 20000;
  double eps_direct = 0.35;
  double eps_refine = 0.05;
  // Error rate on direct documents of trap problems. Non-trap problems get
  // slips at whatever rate brings the overall direct rate to eps_direct.
  double trap_error = 0.7;
  int min_difficulty = kMinDifficulty;
  int max_difficulty = kMaxDifficulty;
  std::uint64_t seed = 7;
  std::uint64_t split_seed = 11;

  // Throws config-error listing every violation.
  void validate() const;
};

struct ErrorRates {
  double trap_fraction = 0;  // share of problems with a trap step
  double trap = 0;           // P(error | trap problem), direct docs
  double other = 0;          // P(error | no trap), direct docs
};

// Estimated from a fixed sample of the problem distribution.
ErrorRates error_rates(const CorpusSpec& spec);

enum class DocKind { direct, refine };
std::string kind_name(DocKind k);

struct Document {
  std::uint64_t id = 0;  // problem id
  DocKind kind = DocKind::direct;
  std::string question;
  std::string answer;
  std::string prompt;  // user message
  std::string text;    // assistant message (the training target)
  bool erroneous = false;
};

lm::ChatMessages to_messages(const Document& d, const lm::PromptTemplates& templates);

// Direct documents first, then refinement documents; every document is
// generated from its own sub-seed, so the corpus is a pure function of spec.
std::vector<Document> gen_pretrain_corpus(const CorpusSpec& spec,
                                          const lm::PromptTemplates& templates = {});

// Distinct problems from one partition, difficulties cycling uniformly over
// [min_difficulty, max_difficulty].
std::vector<Problem> gen_problems(std::uint64_t seed, std::size_t n, Partition part,
                                  std::uint64_t split_seed, int min_difficulty = kMinDifficulty,
                                  int max_difficulty = kMaxDifficulty);
std::vector<Problem> gen_benchmark(std::uint64_t seed, std::size_t n, std::uint64_t split_seed,
                                   int min_difficulty = kMinDifficulty,
                                   int max_difficulty = kMaxDifficulty);

// Line-delimited JSON, one record per line:
//   {"id","kind","question","answer","text"[,"prompt","erroneous"]}
// Problems use kind "problem" and text = faithful trace.
std::string corpus_to_jsonl(const std::vector<Document>& docs);
std::vector<Document> corpus_from_jsonl(const std::string& text);
std::string problems_to_jsonl(const std::vector<Problem>& problems);
std::vector<Problem> problems_from_jsonl(const std::string& text);

}  // namespace ssb::task
