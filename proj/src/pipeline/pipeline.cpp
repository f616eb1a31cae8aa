// SPDX-License-Identifier: Apache-2.0
#include "ssb/pipeline/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"
#include "ssb/common/rng.hpp"
#include "ssb/eval/eval.hpp"
#include "ssb/lm/checkpoint.hpp"
#include "ssb/logits/store.hpp"

namespace ssb::pipeline {

namespace {

using nlohmann::json;

const std::string kPretrainMetrics = "pretrain_metrics.csv";
const std::string kDistillMetrics = "distill_metrics.csv";
const std::string kSftMetrics = "sft_metrics.csv";

std::string reports_file(const PipelineConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.paths.reports) / name).string();
}

// Config key prefixes each stage reads, beyond the master seed.
std::vector<std::string> stage_sections(Stage s) {
  switch (s) {
    case Stage::pretrain: return {"model.", "corpus.", "pretrain."};
    case Stage::curate: return {"curation.", "corpus.min_difficulty", "corpus.max_difficulty"};
    case Stage::precompute: return {};
    case Stage::distill: return {"lora.", "distill."};
    case Stage::sft_baseline: return {"lora.", "distill."};
    case Stage::eval: return {"eval.", "corpus.min_difficulty", "corpus.max_difficulty"};
    case Stage::report: return {"eval."};
  }
  return {};
}

void log_line(std::ostream& log, Stage s, const std::string& msg) {
  log << "[" << stage_name(s) << "] " << msg << std::endl;
}

void write_json(const std::filesystem::path& path, const json& j) {
  io::write_atomic(path, j.dump(1) + "\n");
}

lm::Model load_base(const PipelineConfig& cfg) {
  return lm::load_checkpoint(cfg.artifact(cfg.paths.base_checkpoint));
}

std::vector<curation::CuratedPair> load_pairs(const PipelineConfig& cfg) {
  return curation::pairs_from_jsonl(io::read_text(cfg.artifact(cfg.paths.curated)));
}

void run_pretrain(const PipelineConfig& cfg, std::ostream& log) {
  const lm::PromptTemplates tpl;
  const auto docs = task::gen_pretrain_corpus(cfg.corpus, tpl);
  io::write_atomic(cfg.artifact(cfg.paths.corpus), task::corpus_to_jsonl(docs));
  std::vector<lm::ChatMessages> chats;
  chats.reserve(docs.size());
  for (const auto& d : docs) chats.push_back(task::to_messages(d, tpl));
  log_line(log, Stage::pretrain, std::to_string(docs.size()) + " documents");
  lm::Model model(cfg.model);
  double acc = 0;
  int n = 0;
  const auto hist = distill::pretrain(model, chats, cfg.pretrain, [&](const distill::PretrainRecord& r) {
    acc += r.loss;
    ++n;
    if (r.step % 500 == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "step %d epoch %d loss %.4f lr %.2e", r.step, r.epoch, acc / n, r.lr);
      log_line(log, Stage::pretrain, buf);
      acc = 0;
      n = 0;
    }
  });
  io::write_atomic(cfg.artifact(kPretrainMetrics), distill::pretrain_metrics_csv(hist));
  io::write_atomic(cfg.artifact("logs/pretrain_timing.csv"), distill::pretrain_timing_csv(hist));
  lm::save_checkpoint(model, cfg.artifact(cfg.paths.base_checkpoint));
}

void run_curate(const PipelineConfig& cfg, std::ostream& log) {
  const auto base = load_base(cfg);
  const auto problems = curation_problems(cfg);
  io::write_atomic(cfg.artifact(cfg.paths.problems), task::problems_to_jsonl(problems));
  auto res = curation::curate_dataset(base, problems, cfg.curation);
  const auto& r = res.report;
  log_line(log, Stage::curate,
           "processed " + std::to_string(r.processed) + ", accepted " + std::to_string(r.accepted) +
               ", all-correct " + std::to_string(r.all_correct_skips) + ", all-wrong " +
               std::to_string(r.all_wrong_skips) + ", refine-rejects " + std::to_string(r.refine_rejects) +
               ", overflow " + std::to_string(r.overflow_skips));
  // Pairs are in problem-id order; the cap keeps the lowest ids.
  if (res.pairs.size() > static_cast<std::size_t>(cfg.target_pairs)) res.pairs.resize(cfg.target_pairs);
  log_line(log, Stage::curate, "kept " + std::to_string(res.pairs.size()) + " pairs");
  io::write_atomic(cfg.artifact(cfg.paths.curated), curation::pairs_to_jsonl(res.pairs));
  io::write_atomic(cfg.artifact(cfg.paths.curation_report), curation::report_to_json(res.report));
}

void run_precompute(const PipelineConfig& cfg, std::ostream& log) {
  const auto base = load_base(cfg);
  const auto pairs = load_pairs(cfg);
  std::vector<lm::LogitSequence> seqs;
  seqs.reserve(pairs.size());
  for (const auto& p : pairs) seqs.push_back(logits::precompute_teacher_logits(base, p));
  logits::write_store(seqs, cfg.artifact(cfg.paths.logits));
  log_line(log, Stage::precompute, std::to_string(seqs.size()) + " teacher sequences");
}

distill::StepLog step_logger(Stage s, std::ostream& log) {
  return [s, &log](const distill::TrainMetrics& m) {
    if (m.step % 16 == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "step %d loss %.4f grad_norm %.4f", m.step, m.kd_loss, m.grad_norm);
      log_line(log, s, buf);
    }
  };
}

void run_distill(const PipelineConfig& cfg, std::ostream& log) {
  lm::Model model = load_base(cfg);
  const auto pairs = load_pairs(cfg);
  const auto store = logits::LogitStore::open(cfg.artifact(cfg.paths.logits));
  lm::attach_lora(model, cfg.lora);
  const auto hist = distill::distill_train(model, pairs, store, cfg.distill, step_logger(Stage::distill, log));
  io::write_atomic(cfg.artifact(kDistillMetrics), distill::metrics_csv(hist));
  io::write_atomic(cfg.artifact("logs/distill_timing.csv"), distill::timing_csv(hist));
  lm::save_checkpoint(model, cfg.artifact(cfg.paths.ssb_checkpoint));
}

void run_sft(const PipelineConfig& cfg, std::ostream& log) {
  const auto base = load_base(cfg);
  const auto pairs = load_pairs(cfg);
  auto res = eval::run_sft_baseline(base, pairs, cfg.lora, cfg.distill, step_logger(Stage::sft_baseline, log));
  io::write_atomic(cfg.artifact(kSftMetrics), distill::metrics_csv(res.history));
  io::write_atomic(cfg.artifact("logs/sft_timing.csv"), distill::timing_csv(res.history));
  lm::save_checkpoint(res.model, cfg.artifact(cfg.paths.sft_checkpoint));
}

std::vector<task::Problem> premise_problems(const PipelineConfig& cfg) {
  return task::gen_benchmark(derive_seed(cfg.seed, tag_hash("premise")), cfg.eval.premise_size,
                             cfg.corpus.split_seed, cfg.corpus.min_difficulty, cfg.corpus.max_difficulty);
}

void run_eval(const PipelineConfig& cfg, std::ostream& log) {
  const std::vector<std::pair<std::string, std::string>> models{
      {"base", cfg.paths.base_checkpoint}, {"ssb", cfg.paths.ssb_checkpoint}, {"sft", cfg.paths.sft_checkpoint}};
  eval::DecodeConfig dc;
  dc.max_new = cfg.eval.max_new;
  const auto benches = benchmarks(cfg);
  for (const auto& b : benches)
    io::write_atomic(cfg.artifact(reports_file(cfg, "benchmark_" + b.tag + ".jsonl")),
                     task::problems_to_jsonl(b.problems));
  for (const auto& [tag, ckpt] : models) {
    const auto model = lm::load_checkpoint(cfg.artifact(ckpt));
    for (const auto& b : benches) {
      const auto rep = eval::pass_at_1(model, b.problems, dc, tag, b.tag);
      io::write_atomic(cfg.artifact(records_path(cfg, tag, b.tag)), eval::records_to_jsonl(rep));
      log_line(log, Stage::eval, tag + " on " + b.tag + ": " + eval::format_percent(rep.pass_at_1()));
    }
  }
  const auto base = load_base(cfg);
  const auto pr = eval::premise_probe(base, premise_problems(cfg), dc, derive_seed(cfg.seed, tag_hash("hints")));
  json j = {{"n", pr.n},
            {"hint_free_correct", pr.hint_free_correct},
            {"hinted_correct", pr.hinted_correct},
            {"hint_free", pr.hint_free()},
            {"hinted", pr.hinted()},
            {"gap_points", pr.gap_points()}};
  write_json(cfg.artifact(reports_file(cfg, "premise.json")), j);
  log_line(log, Stage::eval,
           "premise: hint-free " + eval::format_percent(pr.hint_free()) + ", hinted " +
               eval::format_percent(pr.hinted()));
}

double mean_len(const eval::EvalReport& r, std::size_t n) {
  n = std::min(n, r.records.size());
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(r.records[i].completion_len);
  return n ? s / static_cast<double>(n) : 0.0;
}

void run_report(const PipelineConfig& cfg, std::ostream& log) {
  std::vector<eval::EvalReport> reps;
  std::map<std::pair<std::string, std::string>, std::size_t> at;
  for (const auto& m : model_tags())
    for (const auto& b : benchmarks(cfg)) {
      at[{m, b.tag}] = reps.size();
      reps.push_back(eval::records_from_jsonl(io::read_text(cfg.artifact(records_path(cfg, m, b.tag)))));
    }
  const auto tables = eval::compare_report(reps);
  io::write_atomic(cfg.artifact(reports_file(cfg, "table.csv")), tables.csv);
  io::write_atomic(cfg.artifact(reports_file(cfg, "table.txt")), tables.text);
  log << tables.text;

  const auto& base = reps[at[{"base", "heldout"}]];
  const auto& ssb = reps[at[{"ssb", "heldout"}]];
  const auto& sft = reps[at[{"sft", "heldout"}]];
  const auto pc = eval::paired_counts(ssb, base);
  json models = json::object();
  for (const auto& r : reps) {
    models[r.model_tag][r.benchmark_tag] = r.pass_at_1();
    models[r.model_tag]["mean_completion_len"] = 0.0;
  }
  for (const auto& m : model_tags()) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& r : reps)
      if (r.model_tag == m) {
        s += r.mean_completion_len() * static_cast<double>(r.size());
        n += r.size();
      }
    models[m]["mean_completion_len"] = n ? s / static_cast<double>(n) : 0.0;
  }
  const auto probe = static_cast<std::size_t>(cfg.eval.length_probe);
  const double lb = mean_len(base, probe), ls = mean_len(ssb, probe);

  const auto metrics = distill::metrics_from_csv(io::read_text(cfg.artifact(kDistillMetrics)));
  bool finite = true;
  for (const auto& m : metrics) finite = finite && std::isfinite(m.grad_norm) && std::isfinite(m.kd_loss);
  const std::size_t w = 20;
  json dj = {{"steps", metrics.size()}, {"grad_norm_finite", finite}};
  if (metrics.size() >= w) {
    const double first = distill::moving_average(metrics, w, w);
    const double last = distill::moving_average(metrics, metrics.size(), w);
    dj["ma20_first"] = first;
    dj["ma20_last"] = last;
    dj["ma20_ratio"] = last / first;
  }
  const auto cur = curation::report_from_json(io::read_text(cfg.artifact(cfg.paths.curation_report)));
  const json premise = json::parse(io::read_text(cfg.artifact(reports_file(cfg, "premise.json"))));
  json summary = {
      {"models", models},
      {"ssb_vs_base",
       {{"benchmark", "heldout"},
        {"wins", pc.wins},
        {"losses", pc.losses},
        {"p_one_sided", eval::mcnemar_one_sided(pc.wins, pc.losses)}}},
      {"ssb_minus_sft_points", 100.0 * (ssb.pass_at_1() - sft.pass_at_1())},
      {"length_probe",
       {{"n", std::min(probe, base.size())}, {"base", lb}, {"ssb", ls}, {"relative_change", lb > 0 ? (ls - lb) / lb : 0.0}}},
      {"premise", premise},
      {"curation",
       {{"processed", cur.processed},
        {"accepted", cur.accepted},
        {"all_correct_skips", cur.all_correct_skips},
        {"all_wrong_skips", cur.all_wrong_skips},
        {"refine_rejects", cur.refine_rejects},
        {"overflow_skips", cur.overflow_skips},
        {"kept", load_pairs(cfg).size()}}},
      {"distill", dj}};
  write_json(cfg.artifact(reports_file(cfg, "summary.json")), summary);
  char buf[160];
  std::snprintf(buf, sizeof buf, "ssb vs base on heldout: %zu wins, %zu losses, one-sided p = %.4g", pc.wins,
                pc.losses, eval::mcnemar_one_sided(pc.wins, pc.losses));
  log_line(log, Stage::report, buf);
}

void execute(Stage s, const PipelineConfig& cfg, std::ostream& log) {
  switch (s) {
    case Stage::pretrain: return run_pretrain(cfg, log);
    case Stage::curate: return run_curate(cfg, log);
    case Stage::precompute: return run_precompute(cfg, log);
    case Stage::distill: return run_distill(cfg, log);
    case Stage::sft_baseline: return run_sft(cfg, log);
    case Stage::eval: return run_eval(cfg, log);
    case Stage::report: return run_report(cfg, log);
  }
}

}  // namespace

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::pretrain,     Stage::curate, Stage::precompute, Stage::distill,
                                    Stage::sft_baseline, Stage::eval,   Stage::report};
  return s;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::curate: return "curate";
    case Stage::precompute: return "precompute";
    case Stage::distill: return "distill";
    case Stage::sft_baseline: return "sft-baseline";
    case Stage::eval: return "eval";
    case Stage::report: return "report";
  }
  return "?";
}

std::optional<Stage> parse_stage(const std::string& name) {
  for (auto s : all_stages())
    if (stage_name(s) == name) return s;
  return std::nullopt;
}

const std::vector<std::string>& model_tags() {
  static const std::vector<std::string> t{"base", "ssb", "sft"};
  return t;
}

std::string records_path(const PipelineConfig& cfg, const std::string& model, const std::string& bench) {
  return reports_file(cfg, "records_" + model + "_" + bench + ".jsonl");
}

std::vector<Benchmark> benchmarks(const PipelineConfig& cfg) {
  const auto split = cfg.corpus.split_seed;
  return {{"heldout", task::gen_benchmark(derive_seed(cfg.seed, tag_hash("heldout")), cfg.eval.heldout_size,
                                          split, cfg.corpus.min_difficulty, cfg.corpus.max_difficulty)},
          {"hard", task::gen_benchmark(derive_seed(cfg.seed, tag_hash("hard")), cfg.eval.hard_size, split,
                                       cfg.eval.hard_difficulty, cfg.eval.hard_difficulty)}};
}

std::vector<task::Problem> curation_problems(const PipelineConfig& cfg) {
  return task::gen_problems(derive_seed(cfg.seed, tag_hash("curation-problems")), cfg.problems,
                            task::Partition::train, cfg.corpus.split_seed, cfg.corpus.min_difficulty,
                            cfg.corpus.max_difficulty);
}

std::vector<Artifact> stage_inputs(const PipelineConfig& cfg, Stage s) {
  const auto& p = cfg.paths;
  switch (s) {
    case Stage::pretrain: return {};
    case Stage::curate: return {{p.base_checkpoint, Stage::pretrain}};
    case Stage::precompute: return {{p.base_checkpoint, Stage::pretrain}, {p.curated, Stage::curate}};
    case Stage::distill:
      return {{p.base_checkpoint, Stage::pretrain}, {p.curated, Stage::curate}, {p.logits, Stage::precompute}};
    case Stage::sft_baseline: return {{p.base_checkpoint, Stage::pretrain}, {p.curated, Stage::curate}};
    case Stage::eval:
      return {{p.base_checkpoint, Stage::pretrain},
              {p.ssb_checkpoint, Stage::distill},
              {p.sft_checkpoint, Stage::sft_baseline}};
    case Stage::report: {
      std::vector<Artifact> in{{p.curated, Stage::curate},
                               {p.curation_report, Stage::curate},
                               {kDistillMetrics, Stage::distill},
                               {reports_file(cfg, "premise.json"), Stage::eval}};
      for (const auto& m : model_tags())
        for (const char* b : {"heldout", "hard"}) in.push_back({records_path(cfg, m, b), Stage::eval});
      return in;
    }
  }
  return {};
}

std::vector<std::string> stage_outputs(const PipelineConfig& cfg, Stage s) {
  const auto& p = cfg.paths;
  switch (s) {
    case Stage::pretrain: return {p.corpus, p.base_checkpoint, kPretrainMetrics};
    case Stage::curate: return {p.problems, p.curated, p.curation_report};
    case Stage::precompute: return {p.logits};
    case Stage::distill: return {p.ssb_checkpoint, kDistillMetrics};
    case Stage::sft_baseline: return {p.sft_checkpoint, kSftMetrics};
    case Stage::eval: {
      std::vector<std::string> out{reports_file(cfg, "benchmark_heldout.jsonl"),
                                   reports_file(cfg, "benchmark_hard.jsonl"), reports_file(cfg, "premise.json")};
      for (const auto& m : model_tags())
        for (const char* b : {"heldout", "hard"}) out.push_back(records_path(cfg, m, b));
      return out;
    }
    case Stage::report:
      return {reports_file(cfg, "table.csv"), reports_file(cfg, "table.txt"), reports_file(cfg, "summary.json")};
  }
  return {};
}

std::string settings_digest(const PipelineConfig& cfg, Stage s) {
  std::string text = "seed = " + std::to_string(cfg.seed) + "\n";
  for (const auto& k : config_keys())
    for (const auto& prefix : stage_sections(s))
      if (k.key.rfind(prefix, 0) == 0) {
        text += k.key + " = " + config_value(cfg, k.key) + "\n";
        break;
      }
  return io::sha256_hex(text);
}

std::string manifest_to_json(const Manifest& m) {
  json j = {{"stage", m.stage},
            {"settings_digest", m.settings_digest},
            {"seed", m.seed},
            {"inputs", m.inputs},
            {"outputs", m.outputs}};
  return j.dump(1) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    Manifest m;
    m.stage = j.at("stage");
    m.settings_digest = j.at("settings_digest");
    m.seed = j.at("seed");
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    fail(Errc::invalid_argument, std::string("manifest: ") + e.what());
  }
}

std::filesystem::path manifest_path(const PipelineConfig& cfg, Stage s) {
  return cfg.workdir() / "manifests" / (stage_name(s) + ".json");
}

std::optional<Manifest> read_manifest(const PipelineConfig& cfg, Stage s) {
  const auto p = manifest_path(cfg, s);
  if (!std::filesystem::exists(p)) return std::nullopt;
  return manifest_from_json(io::read_text(p));
}

WorkdirLock::WorkdirLock(const std::filesystem::path& workdir) {
  std::filesystem::create_directories(workdir);
  const auto path = workdir / ".ssb.lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  require(fd_ >= 0, Errc::io_error, "cannot open " + path.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    fail(Errc::invalid_state, "another pipeline holds the lock on " + workdir.string());
  }
}

WorkdirLock::~WorkdirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

StageOutcome run_stage(Stage s, const PipelineConfig& cfg, const RunOptions& opts, std::ostream& log) {
  WorkdirLock lock(cfg.workdir());
  const auto name = stage_name(s);

  std::vector<std::string> missing, stale;
  Manifest m;
  m.stage = name;
  m.settings_digest = settings_digest(cfg, s);
  m.seed = cfg.seed;
  for (const auto& in : stage_inputs(cfg, s)) {
    const auto producer = stage_name(in.producer);
    const auto pm = read_manifest(cfg, in.producer);
    const auto path = cfg.artifact(in.path);
    if (!pm || !std::filesystem::exists(path)) {
      missing.push_back(in.path + " (produced by stage '" + producer + "')");
      continue;
    }
    if (pm->settings_digest != settings_digest(cfg, in.producer)) {
      stale.push_back(in.path + ": settings of stage '" + producer + "' changed since it ran; rerun '" +
                      producer + "'");
      continue;
    }
    const auto d = io::file_digest(path);
    auto rec = pm->outputs.find(in.path);
    if (rec == pm->outputs.end() || rec->second != d) {
      stale.push_back(in.path + ": does not match the digest recorded by stage '" + producer + "'; rerun '" +
                      producer + "'");
      continue;
    }
    m.inputs[in.path] = d;
  }
  if (!missing.empty()) {
    std::string msg = "stage '" + name + "' is missing inputs:";
    for (const auto& x : missing) msg += "\n  " + x;
    fail(Errc::missing_input, msg);
  }
  if (!stale.empty()) {
    std::string msg = "stage '" + name + "' has stale inputs:";
    for (const auto& x : stale) msg += "\n  " + x;
    fail(Errc::stale_input, msg);
  }

  if (!opts.force) {
    if (auto prev = read_manifest(cfg, s);
        prev && prev->settings_digest == m.settings_digest && prev->seed == m.seed && prev->inputs == m.inputs) {
      bool intact = true;
      for (const auto& out : stage_outputs(cfg, s)) {
        const auto path = cfg.artifact(out);
        auto rec = prev->outputs.find(out);
        intact = intact && rec != prev->outputs.end() && std::filesystem::exists(path) &&
                 io::file_digest(path) == rec->second;
      }
      if (intact) {
        log_line(log, s, "up to date; skipped (use --force to rerun)");
        return {s, true, *prev};
      }
    }
  }

  // A half-finished rerun must not leave a manifest vouching for old outputs.
  std::filesystem::remove(manifest_path(cfg, s));
  for (const auto& out : stage_outputs(cfg, s))
    std::filesystem::create_directories(cfg.artifact(out).parent_path());
  std::filesystem::create_directories(cfg.workdir() / "logs");
  execute(s, cfg, log);
  for (const auto& out : stage_outputs(cfg, s)) m.outputs[out] = io::file_digest(cfg.artifact(out));
  std::filesystem::create_directories(manifest_path(cfg, s).parent_path());
  io::write_atomic(manifest_path(cfg, s), manifest_to_json(m));
  log_line(log, s, "done");
  return {s, false, m};
}

std::vector<StageOutcome> run_all(const PipelineConfig& cfg, const RunOptions& opts, std::ostream& log) {
  std::vector<StageOutcome> out;
  for (auto s : all_stages()) out.push_back(run_stage(s, cfg, opts, log));
  return out;
}

}  // namespace ssb::pipeline
