#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"
#include "ssb/pipeline/config.hpp"
#include "ssb/pipeline/pipeline.hpp"

using namespace ssb::pipeline;
namespace fs = std::filesystem;

namespace {

std::string config_error_at(const std::string& text, const std::string& workdir) {
  try {
    parse_config(text, workdir);
  } catch (const ssb::Error& e) {
    CHECK(e.code() == ssb::Errc::config_error);
    return e.what();
  }
  return "";
}

std::string config_error(const std::string& text) {
  return config_error_at(text, fs::temp_directory_path().string());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string tiny_config(const fs::path& workdir) {
  return "seed = 3\n"
         "paths.workdir = " + workdir.string() + "\n"
         "model.layers = 1\nmodel.width = 16\nmodel.heads = 2\nmodel.mlp = 32\n"
         "corpus.direct_docs = 120\ncorpus.refine_docs = 40\n"
         "curation.problems = 12\ncuration.target_pairs = 4\n";
}

}  // namespace

TEST_CASE("an empty file yields the defaults") {
  const auto c = parse_config("", "work");
  CHECK(c.seed == 1);
  CHECK(c.curation.K == 4);
  CHECK(c.distill.T_KD == 2.0);
  CHECK(c.distill.batch == 4);
  CHECK(c.distill.epochs == 3);
  CHECK(c.problems == 950);
  CHECK(c.target_pairs == 256);
  CHECK(c.model.vocab > 0);
}

TEST_CASE("config round-trips through its text form") {
  auto text = tiny_config("work") +
              "corpus.eps_direct = 0.3\npretrain.lr = 0.003\nlora.alpha = 12.5\n"
              "lora.targets = wq, layers.0.w1\ndistill.optimizer = sgd\ndistill.T_KD = 1.5\n";
  const auto a = parse_config(text);
  const auto emitted = emit_config(a);
  const auto b = parse_config(emitted);
  CHECK(emit_config(b) == emitted);
  for (const auto& k : config_keys()) CHECK(config_value(a, k.key) == config_value(b, k.key));
  CHECK(b.lora.targets == std::vector<std::string>{"wq", "layers.0.w1"});
  CHECK(b.corpus.eps_direct == 0.3);
  CHECK(b.lora.alpha == 12.5f);
  // Every key appears exactly once, in config_keys order.
  std::size_t last = 0;
  for (const auto& k : config_keys()) {
    const auto at = emitted.find("\n" + k.key + " = ");
    REQUIRE(at != std::string::npos);
    CHECK(at > last);
    CHECK(emitted.find("\n" + k.key + " = ", at + 1) == std::string::npos);
    last = at;
  }
}

TEST_CASE("validation names the key and the constraint") {
  auto e = config_error("distill.T_KD = 1.0\n");
  CHECK(e.find("distill.T_KD") != std::string::npos);
  CHECK(e.find("T_KD > 1") != std::string::npos);
  e = config_error("curation.K = 1\n");
  CHECK(e.find("curation.K") != std::string::npos);
  CHECK(e.find("correct and wrong rollouts") != std::string::npos);
  e = config_error("model.context = 64\n");
  CHECK(e.find("model.context") != std::string::npos);
  CHECK(e.find("longest teacher prompt") != std::string::npos);
}

TEST_CASE("every problem is reported at once") {
  const auto e = config_error(
      "distill.T_KD = 0.5\ncuration.K = 1\nmodel.heads = 3\nbogus.key = 1\n"
      "pretrain.lr = fast\ncuration.K = 2\nno equals sign\nlora.targets = wq,wx\n");
  CHECK(e.find("8 config problem(s)") != std::string::npos);
  for (const char* s : {"distill.T_KD", "curation.K = 1", "model.heads", "bogus.key: unknown key",
                        "pretrain.lr: expected a number", "set more than once", "line 7",
                        "lora.targets"})
    CHECK_MESSAGE(e.find(s) != std::string::npos, s);
}

TEST_CASE("paths must stay inside a writable workdir") {
  auto e = config_error("paths.curated = ../escape.jsonl\n");
  CHECK(e.find("paths.curated") != std::string::npos);
  TempDir d("ssb_test_cfg_file");
  fs::create_directories(d.path);
  ssb::io::write_atomic(d.path / "f", std::string("x"));
  e = config_error_at("", (d.path / "f" / "work").string());
  CHECK(e.find("paths.workdir") != std::string::npos);
}

TEST_CASE("the workdir environment variable overrides the file") {
  TempDir d("ssb_test_cfg_env");
  fs::create_directories(d.path);
  const auto file = d.path / "c.conf";
  ssb::io::write_atomic(file, std::string("paths.workdir = from_file\n"));
  ::setenv(kWorkdirEnv, (d.path / "from_env").c_str(), 1);
  const auto c = load_config(file);
  ::unsetenv(kWorkdirEnv);
  CHECK(c.paths.workdir == (d.path / "from_env").string());
  CHECK(load_config(file).paths.workdir == "from_file");
}

TEST_CASE("master seed determines every module seed") {
  auto a = parse_config("seed = 5\n", "w");
  auto b = parse_config("seed = 5\n", "w");
  auto c = parse_config("seed = 6\n", "w");
  CHECK(a.corpus.seed == b.corpus.seed);
  CHECK(a.distill.seed == b.distill.seed);
  CHECK(a.corpus.seed != c.corpus.seed);
  CHECK(a.curation.seed != c.curation.seed);
  CHECK(a.corpus.split_seed != c.corpus.split_seed);
}

TEST_CASE("stage graph: inputs come from earlier stages") {
  const auto cfg = parse_config("", "w");
  const auto& order = all_stages();
  auto index = [&](Stage s) { return std::find(order.begin(), order.end(), s) - order.begin(); };
  CHECK(index(Stage::curate) < index(Stage::precompute));
  CHECK(index(Stage::precompute) < index(Stage::distill));
  for (auto s : order)
    for (const auto& in : stage_inputs(cfg, s)) {
      CHECK(index(in.producer) < index(s));
      const auto outs = stage_outputs(cfg, in.producer);
      CHECK(std::find(outs.begin(), outs.end(), in.path) != outs.end());
    }
  for (auto s : order) CHECK(parse_stage(stage_name(s)) == s);
  CHECK_FALSE(parse_stage("phase1").has_value());
}

TEST_CASE("manifest json round trip") {
  Manifest m{"curate", "abc", 9, {{"base.ckpt", "11"}}, {{"curated.jsonl", "22"}, {"x", "33"}}};
  CHECK(manifest_from_json(manifest_to_json(m)) == m);
}

TEST_CASE("missing inputs name the producing stage") {
  TempDir d("ssb_test_missing");
  const auto cfg = parse_config(tiny_config(d.path));
  std::ostringstream log;
  try {
    run_stage(Stage::curate, cfg, {}, log);
    FAIL("expected missing-input");
  } catch (const ssb::Error& e) {
    CHECK(e.code() == ssb::Errc::missing_input);
    CHECK(std::string(e.what()).find("'pretrain'") != std::string::npos);
  }
}

TEST_CASE("front stages: deterministic, resumable, tamper-evident") {
  TempDir a("ssb_test_run_a"), b("ssb_test_run_b");
  const auto ca = parse_config(tiny_config(a.path));
  const auto cb = parse_config(tiny_config(b.path));
  std::ostringstream log;
  const std::vector<Stage> front{Stage::pretrain, Stage::curate, Stage::precompute};
  for (auto s : front) {
    const auto ra = run_stage(s, ca, {}, log);
    const auto rb = run_stage(s, cb, {}, log);
    CHECK_FALSE(ra.skipped);
    CHECK(ra.manifest.outputs == rb.manifest.outputs);
    CHECK(ra.manifest.inputs == rb.manifest.inputs);
  }

  SUBCASE("an unchanged rerun is a no-op unless forced") {
    CHECK(run_stage(Stage::curate, ca, {}, log).skipped);
    RunOptions force;
    force.force = true;
    const auto r = run_stage(Stage::curate, ca, force, log);
    CHECK_FALSE(r.skipped);
    CHECK(r.manifest.outputs == read_manifest(cb, Stage::curate)->outputs);
  }
  SUBCASE("a tampered artifact is caught before the next stage") {
    const auto path = ca.artifact(ca.paths.curated);
    ssb::io::write_atomic(path, ssb::io::read_text(path) + "\n");
    try {
      run_stage(Stage::precompute, ca, {}, log);
      FAIL("expected stale-input");
    } catch (const ssb::Error& e) {
      CHECK(e.code() == ssb::Errc::stale_input);
      CHECK(std::string(e.what()).find("'curate'") != std::string::npos);
    }
  }
  SUBCASE("changed upstream settings make downstream inputs stale") {
    auto changed = parse_config(tiny_config(a.path) + "curation.T_roll = 0.5\n");
    try {
      run_stage(Stage::precompute, changed, {}, log);
      FAIL("expected stale-input");
    } catch (const ssb::Error& e) {
      CHECK(e.code() == ssb::Errc::stale_input);
    }
    // Rerunning the producer clears it.
    run_stage(Stage::curate, changed, {}, log);
    CHECK_NOTHROW(run_stage(Stage::precompute, changed, {}, log));
  }
  SUBCASE("a second pipeline cannot take the workdir lock") {
    WorkdirLock held(ca.workdir());
    try {
      run_stage(Stage::curate, ca, {}, log);
      FAIL("expected invalid-state");
    } catch (const ssb::Error& e) {
      CHECK(e.code() == ssb::Errc::invalid_state);
    }
  }
}
