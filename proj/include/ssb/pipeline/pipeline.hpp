// SPDX-License-Identifier: Apache-2.0
//
// Stage orchestration. Each stage reads the declared outputs of earlier
// stages, writes its own artifacts atomically and then records a manifest
// with the digests of its settings, inputs and outputs. A stage whose
// manifest still matches is skipped unless forced.
#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ssb/pipeline/config.hpp"

namespace ssb::pipeline {

enum class Stage { pretrain, curate, precompute, distill, sft_baseline, eval, report };

// Execution order.
const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);
std::optional<Stage> parse_stage(const std::string& name);

struct Artifact {
  std::string path;  // relative to the workdir
  Stage producer;
};
std::vector<Artifact> stage_inputs(const PipelineConfig& cfg, Stage s);
std::vector<std::string> stage_outputs(const PipelineConfig& cfg, Stage s);

struct Manifest {
  std::string stage;
  std::string settings_digest;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256

  bool operator==(const Manifest&) const = default;
};
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
std::filesystem::path manifest_path(const PipelineConfig& cfg, Stage s);
std::optional<Manifest> read_manifest(const PipelineConfig& cfg, Stage s);

// Digest of the seed and the config keys the stage reads.
std::string settings_digest(const PipelineConfig& cfg, Stage s);

struct RunOptions {
  bool force = false;
};

struct StageOutcome {
  Stage stage;
  bool skipped = false;
  Manifest manifest;
};

// Throws missing-input naming the producing stage when an input or its
// manifest is absent, and stale-input when an input no longer matches the
// digest its producer recorded or the producer's settings have changed.
StageOutcome run_stage(Stage s, const PipelineConfig& cfg, const RunOptions& opts,
                       std::ostream& log);

// Every stage in order.
std::vector<StageOutcome> run_all(const PipelineConfig& cfg, const RunOptions& opts,
                                  std::ostream& log);

// Holds an exclusive lock on <workdir>/.ssb.lock for its lifetime. Throws
// invalid-state when another process holds it.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  int fd_ = -1;
};

// Evaluation benchmarks in report order: heldout, then hard.
struct Benchmark {
  std::string tag;
  std::vector<task::Problem> problems;
};
std::vector<Benchmark> benchmarks(const PipelineConfig& cfg);
std::vector<task::Problem> curation_problems(const PipelineConfig& cfg);
// Model tags in report order: base, ssb, sft.
const std::vector<std::string>& model_tags();
std::string records_path(const PipelineConfig& cfg, const std::string& model, const std::string& bench);

}  // namespace ssb::pipeline
