#include <set>
#include <sstream>

#include "doctest.h"
#include "ssb/common/error.hpp"
#include "ssb/lm/tokenizer.hpp"
#include "ssb/task/task.hpp"

using namespace ssb::task;

namespace {

// Independent evaluator: recursive descent over the question text with
// standard precedence-free parenthesized semantics.
struct Eval {
  const std::string& s;
  std::size_t i = 0;
  long long term() {
    if (s[i] == '(') {
      ++i;
      long long v = expr();
      REQUIRE(s[i] == ')');
      ++i;
      return v;
    }
    long long v = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) v = v * 10 + (s[i++] - '0');
    return v;
  }
  long long expr() {
    long long v = term();
    while (i < s.size() && s[i] != ')') {
      const char op = s[i++];
      const long long r = term();
      v = op == '+' ? v + r : op == '-' ? v - r : v * r;
    }
    return v;
  }
};

long long oracle_eval(const std::string& q) {
  Eval e{q};
  return e.expr();
}

std::string last_boxed(const std::string& text) {
  const auto b = text.rfind("\\boxed{");
  REQUIRE(b != std::string::npos);
  const auto e = text.find('}', b);
  return text.substr(b + 7, e - b - 7);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

// Counts steps whose written result is not the arithmetic of its operands.
int wrong_steps(const std::string& text) {
  int bad = 0;
  for (const auto& l : lines(text)) {
    if (l.starts_with("\\boxed")) continue;
    const auto eq = l.find('=');
    const auto lhs = l.substr(0, eq);
    const auto op_pos = lhs.find_first_of("+-*", 1);
    const long long a = std::stoll(lhs.substr(0, op_pos));
    const long long b = std::stoll(lhs.substr(op_pos + 1));
    const char op = lhs[op_pos];
    const long long c = std::stoll(l.substr(eq + 1));
    const long long want = op == '+' ? a + b : op == '-' ? a - b : a * b;
    bad += (c != want);
  }
  return bad;
}

}  // namespace

TEST_CASE("worked example") {
  auto p = make_problem({3, 4, 2, 5}, "+*-");
  CHECK(p.question == "((3+4)*2)-5");
  CHECK(p.answer == "9");
  CHECK(render_trace(p).text == "3+4=7\n7*2=14\n14-5=9\n\\boxed{9}");
  auto q = make_problem({3, 7, 2, 5}, "-*+");
  CHECK(render_trace(q).text == "3-7=-4\n-4*2=-8\n-8+5=-3\n\\boxed{-3}");
  CHECK(first_trap_step(q) == 0);
  ssb::Rng rng(1);
  auto t = render_trace(q, rng);
  CHECK(t.error == ErrorKind::sign_drop);
  CHECK(t.text == "3-7=4\n4*2=8\n8+5=13\n\\boxed{13}");
}

TEST_CASE("generation is deterministic and respects difficulty") {
  for (int d = kMinDifficulty; d <= kMaxDifficulty; ++d) {
    ssb::Rng a(0), b(0);
    auto p = gen_problem(a, d), q = gen_problem(b, d);
    CHECK(p == q);
    CHECK(p.difficulty == d);
    CHECK(p.ops.size() == static_cast<std::size_t>(d));
  }
  ssb::Rng r(0);
  CHECK_THROWS_AS(gen_problem(r, 5), ssb::Error);
}

TEST_CASE("property: the answer oracle agrees on 10,000 problems") {
  ssb::Rng rng(123);
  int agree = 0;
  for (int i = 0; i < 10000; ++i) {
    auto p = gen_problem(rng, 2 + i % 3);
    agree += std::to_string(oracle_eval(p.question)) == p.answer;
    for (auto v : chain_values(p)) CHECK(std::abs(v) <= kValueBound);
  }
  CHECK(agree == 10000);
}

TEST_CASE("property: traces") {
  ssb::Rng rng(5);
  const auto& tok = ssb::lm::Tokenizer::standard();
  for (int i = 0; i < 2000; ++i) {
    auto p = gen_problem(rng, 2 + i % 3);
    auto good = render_trace(p);
    CHECK(last_boxed(good.text) == p.answer);
    CHECK(lines(good.text).size() == static_cast<std::size_t>(p.difficulty) + 1);
    CHECK(wrong_steps(good.text) == 0);
    auto bad = render_trace(p, rng);
    CHECK(last_boxed(bad.text) != p.answer);
    CHECK(last_boxed(bad.text) == bad.answer);
    CHECK(wrong_steps(bad.text) == 1);
    CHECK_NOTHROW(tok.encode(p.question));
    CHECK_NOTHROW(tok.encode(bad.text));
  }
}

TEST_CASE("question parsing inverts rendering") {
  ssb::Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    auto p = gen_problem(rng, 2 + i % 3);
    CHECK(parse_question(p.question) == p);
  }
  CHECK_THROWS_AS(parse_question("3+4)*2"), ssb::Error);
  CHECK_THROWS_AS(parse_question("(3+4*2"), ssb::Error);
  CHECK_THROWS_AS(parse_question("3/4"), ssb::Error);
  CHECK(parse_id_hex(id_hex(0x0123456789abcdefULL)) == 0x0123456789abcdefULL);
}

TEST_CASE("pretraining corpus") {
  CorpusSpec spec;  // 50k direct / 20k refine, eps 0.35 / 0.05, seed 7
  auto a = gen_pretrain_corpus(spec);
  auto b = gen_pretrain_corpus(spec);
  REQUIRE(a.size() == 70000);
  CHECK(corpus_to_jsonl(a) == corpus_to_jsonl(b));

  int direct = 0, direct_wrong = 0, refine = 0, refine_wrong = 0;
  for (const auto& d : a) {
    const bool wrong = last_boxed(d.text) != d.answer;
    CHECK(wrong == d.erroneous);
    if (d.kind == DocKind::direct) {
      ++direct;
      direct_wrong += wrong;
      CHECK(d.prompt == d.question);
    } else {
      ++refine;
      refine_wrong += wrong;
      CHECK(d.prompt.find(d.question) != std::string::npos);
    }
  }
  CHECK(direct == 50000);
  CHECK(static_cast<double>(direct_wrong) / direct == doctest::Approx(0.35).epsilon(0.02 / 0.35));
  CHECK(static_cast<double>(refine_wrong) / refine < 0.35);

  spec.eps_refine = 0.0;
  spec.direct_docs = 100;
  spec.refine_docs = 2000;
  for (const auto& d : gen_pretrain_corpus(spec))
    if (d.kind == DocKind::refine) CHECK(last_boxed(d.text) == d.answer);
}

TEST_CASE("trap-conditioned error rates") {
  CorpusSpec spec;
  auto r = error_rates(spec);
  CHECK(r.trap_fraction > 0.2);
  CHECK(r.trap_fraction < 0.4);
  CHECK(r.trap_fraction * r.trap + (1 - r.trap_fraction) * r.other ==
        doctest::Approx(spec.eps_direct));
  CHECK(r.trap > 0.5);  // greedy hint-free decoding should fail on traps
  CHECK(r.other < 0.5);
}

TEST_CASE("benchmark is disjoint from training problems") {
  CorpusSpec spec;
  spec.direct_docs = 20000;
  spec.refine_docs = 5000;
  std::set<std::uint64_t> train;
  for (const auto& d : gen_pretrain_corpus(spec)) train.insert(d.id);
  for (const auto& p : gen_problems(3, 950, Partition::train, spec.split_seed)) train.insert(p.id);
  auto bench = gen_benchmark(99, 500, spec.split_seed);
  CHECK(bench.size() == 500);
  std::set<std::uint64_t> ids;
  for (const auto& p : bench) {
    ids.insert(p.id);
    CHECK(train.count(p.id) == 0);
  }
  CHECK(ids.size() == 500);
  CHECK(problems_to_jsonl(gen_benchmark(99, 200, spec.split_seed)) ==
        problems_to_jsonl(gen_benchmark(99, 200, spec.split_seed)));
}

TEST_CASE("JSONL round trips") {
  CorpusSpec spec;
  spec.direct_docs = 50;
  spec.refine_docs = 20;
  auto docs = gen_pretrain_corpus(spec);
  auto text = corpus_to_jsonl(docs);
  CHECK(corpus_to_jsonl(corpus_from_jsonl(text)) == text);
  auto probs = gen_benchmark(1, 30, 11);
  CHECK(problems_from_jsonl(problems_to_jsonl(probs)) == probs);
  CHECK_THROWS_AS(problems_from_jsonl("{\"id\":\"x\"}\n"), ssb::Error);
}
