#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "ssb/common/error.hpp"
#include "ssb/curation/answer.hpp"
#include "ssb/eval/eval.hpp"
#include "ssb/lm/tokenizer.hpp"

using namespace ssb::eval;

namespace {

ssb::lm::ModelConfig tiny() {
  ssb::lm::ModelConfig c;
  c.vocab = ssb::lm::Tokenizer::standard().size();
  c.context = 256;
  c.layers = 1;
  c.width = 16;
  c.heads = 2;
  c.mlp = 32;
  return c;
}

EvalReport synthetic(const std::string& model, const std::string& bench, std::size_t n,
                     std::size_t correct, std::size_t len) {
  EvalReport r;
  r.model_tag = model;
  r.benchmark_tag = bench;
  for (std::size_t i = 0; i < n; ++i) {
    QuestionRecord q;
    q.id = i + 1;
    q.question = "1+" + std::to_string(i);
    q.answer = std::to_string(i + 1);
    q.correct = i < correct;
    q.parsed = q.correct ? std::optional<std::string>(q.answer) : std::nullopt;
    q.completion_len = len;
    r.correct += q.correct;
    r.records.push_back(q);
  }
  return r;
}

std::vector<ssb::curation::CuratedPair> pairs_for(std::size_t n) {
  auto problems = ssb::task::gen_problems(9, n, ssb::task::Partition::train, 11, 2, 2);
  ssb::lm::PromptTemplates t;
  ssb::Rng rng(4);
  std::vector<ssb::curation::CuratedPair> out;
  for (const auto& p : problems) {
    const auto good = ssb::task::render_trace(p).text;
    const auto bad = ssb::task::render_trace(p, rng).text;
    out.push_back(ssb::curation::make_pair(
        p, ssb::curation::build_ssb_prompt(p.question, good, bad, t), good, t));
  }
  return out;
}

// Upper binomial tail at p = 1/2 from Pascal's triangle.
double tail_oracle(int wins, int losses) {
  const int n = wins + losses;
  std::vector<double> row{1.0};
  for (int i = 0; i < n; ++i) {
    std::vector<double> next(row.size() + 1, 0.0);
    for (std::size_t k = 0; k < row.size(); ++k) {
      next[k] += row[k] / 2;
      next[k + 1] += row[k] / 2;
    }
    row = next;
  }
  double s = 0;
  for (int k = wins; k <= n; ++k) s += row[k];
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("pass@1 arithmetic and percent rendering") {
  CHECK(synthetic("m", "b", 30, 4, 1).pass_at_1() == doctest::Approx(4.0 / 30));
  CHECK(format_percent(4.0 / 30) == "13.3%");
  CHECK(format_percent(0.0) == "0.0%");
  CHECK(format_percent(0.554) == "55.4%");
  CHECK(format_percent(1.0) == "100.0%");
  const auto r = synthetic("m", "b", 8, 3, 1);
  CHECK(r.pass_at_1() == 0.375);
  CHECK(pass_at_1_from_records(r.records) == 0.375);
  CHECK(pass_at_1_from_records({}) == 0.0);
}

TEST_CASE("comparison table: three models by two benchmarks") {
  std::vector<EvalReport> reps;
  const char* models[] = {"base", "ssb", "sft"};
  for (int m = 0; m < 3; ++m) {
    reps.push_back(synthetic(models[m], "heldout", 200, 100 + 10 * m, 20 + m));
    reps.push_back(synthetic(models[m], "hard", 100, 10 * m, 30 + m));
  }
  const auto t = compare_report(reps);
  CHECK(t.csv ==
        "model,heldout,hard,mean_completion_len\n"
        "base,50.0%,0.0%,23.3\n"
        "ssb,55.0%,10.0%,24.3\n"
        "sft,60.0%,20.0%,25.3\n");
  std::istringstream lines(t.text);
  std::string line;
  std::size_t width = 0, count = 0;
  while (std::getline(lines, line)) {
    if (count++ == 0) width = line.size();
    CHECK(line.size() == width);
  }
  CHECK(count == 4);

  SUBCASE("duplicate cells are rejected") {
    reps.push_back(synthetic("ssb", "hard", 5, 1, 1));
    CHECK_THROWS_AS(compare_report(reps), ssb::Error);
  }
  SUBCASE("file output is byte-stable") {
    const auto dir = std::filesystem::temp_directory_path() / "ssb_test_eval";
    std::filesystem::create_directories(dir);
    compare_report(reps, dir / "a.csv", dir / "a.txt");
    compare_report(reps, dir / "b.csv", dir / "b.txt");
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.txt") == slurp(dir / "b.txt"));
    CHECK(slurp(dir / "a.csv") == t.csv);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("one-sided McNemar matches the binomial tail") {
  CHECK(mcnemar_one_sided(8, 1) == doctest::Approx(10.0 / 512));
  CHECK(mcnemar_one_sided(0, 5) == doctest::Approx(1.0));
  CHECK(mcnemar_one_sided(0, 0) == 1.0);
  for (int w = 0; w <= 40; w += 3)
    for (int l = 0; l <= 40; l += 7)
      CHECK(mcnemar_one_sided(w, l) == doctest::Approx(tail_oracle(w, l)).epsilon(1e-9));
}

TEST_CASE("paired counts") {
  auto a = synthetic("a", "b", 10, 6, 1);
  auto b = synthetic("b", "b", 10, 3, 1);
  b.records[9].correct = true;
  const auto c = paired_counts(a, b);
  CHECK(c.wins == 3);
  CHECK(c.losses == 1);
  b.records[0].id = 99;
  CHECK_THROWS_AS(paired_counts(a, b), ssb::Error);
  CHECK_THROWS_AS(paired_counts(a, synthetic("c", "b", 9, 0, 1)), ssb::Error);
}

TEST_CASE("greedy evaluation is deterministic and self-consistent") {
  ssb::lm::Model m(tiny());
  const auto bench = ssb::task::gen_benchmark(5, 12, 11);
  DecodeConfig cfg;
  cfg.max_new = 24;
  const auto a = pass_at_1(m, bench, cfg, "base", "heldout");
  const auto b = pass_at_1(m, bench, cfg, "base", "heldout");
  REQUIRE(a.size() == bench.size());
  CHECK(a.records == b.records);
  CHECK(a.pass_at_1() == pass_at_1_from_records(a.records));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& r = a.records[i];
    CHECK(r.id == bench[i].id);
    CHECK(r.parsed == ssb::curation::extract_boxed_answer(r.response));
    CHECK(r.correct == (r.parsed == ssb::curation::canonical_answer(r.answer)));
    CHECK(r.completion_len <= 24u);
    CHECK(r.truncated == (r.completion_len == 24u));
  }
  const auto back = records_from_jsonl(records_to_jsonl(a));
  CHECK(back.model_tag == "base");
  CHECK(back.benchmark_tag == "heldout");
  CHECK(back.correct == a.correct);
  CHECK(back.records == a.records);
  CHECK(records_to_jsonl(back) == records_to_jsonl(a));
}

TEST_CASE("scoring canonicalizes equivalent integer forms") {
  // The scorer compares the canonical boxed content with the canonical answer.
  for (auto [text, answer, ok] : std::vector<std::tuple<std::string, std::string, bool>>{
           {"\\boxed{007}", "7", true},
           {"\\boxed{-0}", "0", true},
           {"\\boxed{+12}", "12", true},
           {"\\boxed{- 5}", "-5", true},
           {"\\boxed{5}", "-5", false},
           {"5", "5", false}}) {
    const auto parsed = ssb::curation::extract_boxed_answer(text);
    CHECK((parsed && *parsed == ssb::curation::canonical_answer(answer)) == ok);
  }
}

TEST_CASE("SFT control: masked cross-entropy starts near ln V and fits the data") {
  ssb::lm::Model base(tiny());
  const auto pairs = pairs_for(16);
  ssb::distill::DistillConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 1e-2;
  ssb::lm::LoraConfig lora;
  lora.targets = {"wq", "wk", "wv", "wo", "w1", "w2"};
  const double before = token_accuracy(base, pairs);
  auto res = run_sft_baseline(base, pairs, lora, cfg);
  REQUIRE(res.history.size() == 24);
  const double lnv = std::log(static_cast<double>(tiny().vocab));
  CHECK(std::abs(res.history.front().kd_loss - lnv) < 0.1 * lnv);
  CHECK(res.history.back().kd_loss < res.history.front().kd_loss);
  CHECK(token_accuracy(res.model, pairs) > before);
  CHECK(base.adapters().empty());
  CHECK_THROWS_AS(run_sft_baseline(res.model, pairs, lora, cfg), ssb::Error);
}

TEST_CASE("premise probe counts") {
  ssb::lm::Model m(tiny());
  const auto problems = ssb::task::gen_benchmark(5, 6, 11);
  DecodeConfig cfg;
  cfg.max_new = 16;
  const auto r = premise_probe(m, problems, cfg, 3);
  CHECK(r.n == 6);
  CHECK(r.hint_free_correct <= r.n);
  CHECK(r.hinted_correct <= r.n);
  CHECK(r.gap_points() == doctest::Approx(100.0 * (r.hinted() - r.hint_free())));
}
