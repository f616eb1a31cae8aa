// SPDX-License-Identifier: Apache-2.0
//
// ssb <stage> --config <path> [--force] [--seed N]
//
// Exit codes: 0 success, 2 invalid config or invocation, 3 missing or stale
// stage inputs, 1 anything else.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ssb/common/error.hpp"
#include "ssb/pipeline/config.hpp"
#include "ssb/pipeline/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kInvalid = 2;
constexpr int kInputs = 3;

std::string stage_list() {
  std::string s;
  for (auto st : ssb::pipeline::all_stages()) s += ssb::pipeline::stage_name(st) + ", ";
  return s + "all, validate";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-distillation pipeline: pretrain, curate, precompute, distill, sft-baseline, eval, report"};
  std::string stage, config;
  bool force = false;
  std::optional<std::uint64_t> seed;
  app.add_option("stage", stage, "one of: " + stage_list())->required();
  app.add_option("--config", config, "pipeline config file")->required();
  app.add_flag("--force", force, "rerun even when the stage manifest is up to date");
  app.add_option("--seed", seed, "replace the master seed");
  app.footer("The workdir can be replaced with the " + std::string(ssb::pipeline::kWorkdirEnv) +
             " environment variable.");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  const bool all = stage == "all", validate = stage == "validate";
  const auto st = ssb::pipeline::parse_stage(stage);
  if (!st && !all && !validate) {
    std::cerr << "unknown stage '" << stage << "'; expected one of: " << stage_list() << "\n";
    return kInvalid;
  }
  try {
    auto cfg = ssb::pipeline::load_config(config);
    if (seed) {
      cfg.seed = *seed;
      cfg.derive_seeds();
    }
    if (validate) {
      std::cout << ssb::pipeline::emit_config(cfg);
      return kOk;
    }
    ssb::pipeline::RunOptions opts;
    opts.force = force;
    if (all) ssb::pipeline::run_all(cfg, opts, std::cout);
    else ssb::pipeline::run_stage(*st, cfg, opts, std::cout);
    return kOk;
  } catch (const ssb::Error& e) {
    std::cerr << e.what() << "\n";
    switch (e.code()) {
      case ssb::Errc::config_error: return kInvalid;
      case ssb::Errc::missing_input:
      case ssb::Errc::stale_input: return kInputs;
      default: return kFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
