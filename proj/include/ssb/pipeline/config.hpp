// SPDX-License-Identifier: Apache-2.0
//
// Pipeline configuration: a flat, commented key = value file. Every key has a
// default; emitting a config writes every key in a fixed order, so parsing
// the emitted text reproduces the config exactly.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssb/curation/curation.hpp"
#include "ssb/distill/distill.hpp"
#include "ssb/distill/pretrain.hpp"
#include "ssb/lm/model.hpp"
#include "ssb/task/task.hpp"

namespace ssb::pipeline {

// Artifact locations; every entry except workdir is relative to workdir.
struct Paths {
  std::string workdir = "work";
  std::string corpus = "corpus.jsonl";
  std::string base_checkpoint = "base.ckpt";
  std::string problems = "curation_problems.jsonl";
  std::string curated = "curated.jsonl";
  std::string curation_report = "curation_report.json";
  std::string logits = "teacher_logits.ssbl";
  std::string ssb_checkpoint = "ssb.ckpt";
  std::string sft_checkpoint = "sft.ckpt";
  std::string reports = "reports";

  bool operator==(const Paths&) const = default;
};

struct BenchmarkSpec {
  int heldout_size = 200;
  int hard_size = 100;
  int hard_difficulty = 4;
  int max_new = 96;
  // Leading heldout questions used for the completion-length comparison.
  int length_probe = 100;
  int premise_size = 200;

  bool operator==(const BenchmarkSpec&) const = default;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  Paths paths;
  // vocab is implied by the tokenizer and not a config key.
  lm::ModelConfig model;
  task::CorpusSpec corpus;
  distill::PretrainConfig pretrain;
  int problems = 950;
  int target_pairs = 256;
  curation::CurationConfig curation;
  lm::LoraConfig lora;
  distill::DistillConfig distill;
  BenchmarkSpec eval;

  // Fills the per-module seeds from the master seed. Idempotent.
  void derive_seeds();
  std::filesystem::path workdir() const { return paths.workdir; }
  std::filesystem::path artifact(const std::string& rel) const { return workdir() / rel; }
};

struct ConfigKey {
  std::string key;
  std::string doc;
};
// Every key in emit order.
const std::vector<ConfigKey>& config_keys();

// Environment variable that replaces paths.workdir; nothing else is
// read from the environment.
inline constexpr const char* kWorkdirEnv = "SSB_WORKDIR";

// Parses and validates, collecting every problem before throwing a single
// config-error whose message lists one "key: constraint" line per problem.
// A workdir argument replaces paths.workdir before validation.
PipelineConfig parse_config(const std::string& text,
                            const std::optional<std::string>& workdir = std::nullopt);
// Reads the file and applies the environment workdir override.
PipelineConfig load_config(const std::filesystem::path& path);

// Constraint violations of an already-populated config, one per line.
std::vector<std::string> config_violations(const PipelineConfig& cfg);

// Canonical text form with every key and a comment per key.
std::string emit_config(const PipelineConfig& cfg);

// Value of one key in canonical form.
std::string config_value(const PipelineConfig& cfg, const std::string& key);

// Teacher prompt tokens for the longest question and traces the corpus
// settings allow, plus the generation budget.
std::size_t worst_case_teacher_tokens(const PipelineConfig& cfg);

}  // namespace ssb::pipeline
