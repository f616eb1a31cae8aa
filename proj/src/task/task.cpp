// SPDX-License-Identifier: Apache-2.0
#include "ssb/task/task.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "ssb/common/error.hpp"

namespace ssb::task {

namespace {

bool valid_op(char c) { return c == '+' || c == '-' || c == '*'; }

std::string step_line(std::int64_t a, char op, int b, std::int64_t c) {
  return std::to_string(a) + op + std::to_string(b) + "=" + std::to_string(c);
}

std::string boxed(std::int64_t v) { return "\\boxed{" + std::to_string(v) + "}"; }

// Renders the chain given per-step results, which may deviate from the true
// arithmetic after a corrupted step.
std::string render_steps(const Problem& p, const std::vector<std::int64_t>& values) {
  std::string out;
  std::int64_t prev = p.operands[0];
  for (int i = 0; i < p.difficulty; ++i) {
    out += step_line(prev, p.ops[i], p.operands[i + 1], values[i]);
    out += '\n';
    prev = values[i];
  }
  out += boxed(prev);
  return out;
}

// Re-evaluates the chain from `step` onward starting at `value`.
std::vector<std::int64_t> propagate(const Problem& p, std::vector<std::int64_t> values, int step,
                                    std::int64_t value) {
  values[step] = value;
  for (int i = step + 1; i < p.difficulty; ++i)
    values[i] = apply_op(p.ops[i], values[i - 1], p.operands[i + 1]);
  return values;
}

bool within_bound(const Problem& p) {
  for (auto v : chain_values(p))
    if (v > kValueBound || v < -kValueBound) return false;
  return true;
}

constexpr std::uint64_t kDirectTag = tag_hash("direct");
constexpr std::uint64_t kRefineTag = tag_hash("refine");

}  // namespace

std::int64_t apply_op(char op, std::int64_t a, std::int64_t b) {
  switch (op) {
    case '+': return a + b;
    case '-': return a - b;
    case '*': return a * b;
  }
  fail(Errc::invalid_argument, std::string("unknown operator '") + op + "'");
}

std::vector<std::int64_t> chain_values(const Problem& p) {
  std::vector<std::int64_t> out;
  std::int64_t v = p.operands.at(0);
  for (int i = 0; i < p.difficulty; ++i) {
    v = apply_op(p.ops[i], v, p.operands[i + 1]);
    out.push_back(v);
  }
  return out;
}

std::uint64_t problem_id(const std::string& question) { return mix64(tag_hash(question)); }

std::string id_hex(std::uint64_t id) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id));
  return buf;
}

std::uint64_t parse_id_hex(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  require(ec == std::errc() && ptr == s.data() + s.size() && s.size() == 16,
          Errc::invalid_argument, "bad id '" + s + "'");
  return v;
}

Problem make_problem(std::vector<int> operands, std::string ops) {
  require(!ops.empty() && operands.size() == ops.size() + 1, Errc::invalid_argument,
          "chain needs one more operand than operators");
  for (char c : ops) require(valid_op(c), Errc::invalid_argument, "bad operator");
  for (int x : operands)
    require(x >= 1 && x <= kMaxOperand, Errc::invalid_argument, "operand out of range");
  Problem p;
  p.difficulty = static_cast<int>(ops.size());
  p.operands = std::move(operands);
  p.ops = std::move(ops);
  std::string q = std::to_string(p.operands[0]);
  for (int i = 0; i < p.difficulty; ++i) {
    if (i > 0) q = "(" + q + ")";
    q += p.ops[i];
    q += std::to_string(p.operands[i + 1]);
  }
  p.question = q;
  p.answer = std::to_string(chain_values(p).back());
  p.id = problem_id(q);
  return p;
}

Problem parse_question(const std::string& question) {
  std::vector<int> operands;
  std::string ops;
  std::size_t i = 0;
  while (i < question.size() && question[i] == '(') ++i;
  const std::size_t opens = i;
  auto digit = [&] {
    require(i < question.size() && question[i] >= '1' && question[i] <= '9',
            Errc::invalid_argument, "bad question '" + question + "'");
    operands.push_back(question[i++] - '0');
  };
  digit();
  while (i < question.size()) {
    if (question[i] == ')') {
      ++i;
      continue;
    }
    require(valid_op(question[i]), Errc::invalid_argument, "bad question '" + question + "'");
    ops.push_back(question[i++]);
    digit();
  }
  require(!ops.empty() && opens == ops.size() - 1, Errc::invalid_argument,
          "bad question '" + question + "'");
  Problem p = make_problem(std::move(operands), std::move(ops));
  require(p.question == question, Errc::invalid_argument, "bad question '" + question + "'");
  return p;
}

Partition partition_of(std::uint64_t id, std::uint64_t split_seed) {
  return (derive_seed(split_seed, id) & 7) == 0 ? Partition::benchmark : Partition::train;
}

Problem gen_problem(Rng& rng, int difficulty) {
  require(difficulty >= kMinDifficulty && difficulty <= kMaxDifficulty, Errc::invalid_argument,
          "difficulty must be in [2, 4]");
  static constexpr char kOps[] = {'+', '-', '*'};
  for (;;) {
    std::vector<int> operands(difficulty + 1);
    std::string ops(difficulty, '+');
    for (auto& x : operands) x = rng.range(1, kMaxOperand);
    for (auto& c : ops) c = kOps[rng.below(3)];
    Problem p = make_problem(std::move(operands), std::move(ops));
    if (within_bound(p)) return p;
  }
}

Problem gen_problem(Rng& rng, int difficulty, Partition part, std::uint64_t split_seed) {
  for (;;) {
    Problem p = gen_problem(rng, difficulty);
    if (partition_of(p.id, split_seed) == part) return p;
  }
}

std::optional<int> first_trap_step(const Problem& p) {
  std::int64_t prev = p.operands[0];
  const auto values = chain_values(p);
  for (int i = 0; i < p.difficulty; ++i) {
    if (p.ops[i] == '-' && prev >= 0 && values[i] < 0) return i;
    prev = values[i];
  }
  return std::nullopt;
}

Trace render_trace(const Problem& p) {
  Trace t;
  t.text = render_steps(p, chain_values(p));
  t.answer = p.answer;
  return t;
}

Trace render_trace(const Problem& p, Rng& rng) {
  const auto truth = chain_values(p);
  const auto trap = first_trap_step(p);
  static constexpr int kSlips[] = {-3, -2, -1, 1, 2, 3};
  for (;;) {
    Trace t;
    std::vector<std::int64_t> values;
    if (trap) {
      t.error = ErrorKind::sign_drop;
      t.error_step = *trap;
      values = propagate(p, truth, *trap, -truth[*trap]);
    } else {
      t.error = ErrorKind::slip;
      t.error_step = static_cast<int>(rng.below(p.difficulty));
      values = propagate(p, truth, t.error_step, truth[t.error_step] + kSlips[rng.below(6)]);
    }
    t.answer = std::to_string(values.back());
    if (t.answer == p.answer) continue;
    t.text = render_steps(p, values);
    return t;
  }
}

void CorpusSpec::validate() const {
  std::vector<std::string> errs;
  if (direct_docs < 0 || refine_docs < 0) errs.push_back("corpus doc counts must be >= 0");
  auto rate = [&](double v, const char* key) {
    if (!(v >= 0.0 && v <= 1.0)) errs.push_back(std::string(key) + " must be in [0, 1]");
  };
  rate(eps_direct, "corpus.eps_direct");
  rate(eps_refine, "corpus.eps_refine");
  rate(trap_error, "corpus.trap_error");
  if (!(min_difficulty >= kMinDifficulty && max_difficulty <= kMaxDifficulty &&
        min_difficulty <= max_difficulty))
    errs.push_back("corpus difficulty range must lie within [2, 4]");
  if (errs.empty()) return;
  std::string msg;
  for (const auto& e : errs) msg += (msg.empty() ? "" : "; ") + e;
  fail(Errc::config_error, msg);
}

ErrorRates error_rates(const CorpusSpec& spec) {
  constexpr int kSample = 20000;
  Rng rng(derive_seed(spec.seed, tag_hash("trap-fraction")));
  int traps = 0;
  const int span = spec.max_difficulty - spec.min_difficulty + 1;
  for (int i = 0; i < kSample; ++i) {
    const Problem p = gen_problem(rng, spec.min_difficulty + i % span);
    traps += first_trap_step(p).has_value();
  }
  ErrorRates r;
  r.trap_fraction = static_cast<double>(traps) / kSample;
  r.trap = spec.trap_error;
  if (r.trap_fraction * r.trap > spec.eps_direct) r.trap = spec.eps_direct / r.trap_fraction;
  r.other = r.trap_fraction < 1.0
                ? (spec.eps_direct - r.trap_fraction * r.trap) / (1.0 - r.trap_fraction)
                : 0.0;
  if (r.other > 1.0) r.other = 1.0;
  return r;
}

std::string kind_name(DocKind k) { return k == DocKind::direct ? "direct" : "refine"; }

lm::ChatMessages to_messages(const Document& d, const lm::PromptTemplates& templates) {
  return {{lm::Role::system, templates.system},
          {lm::Role::user, d.prompt},
          {lm::Role::assistant, d.text}};
}

std::vector<Document> gen_pretrain_corpus(const CorpusSpec& spec,
                                          const lm::PromptTemplates& templates) {
  spec.validate();
  const ErrorRates rates = error_rates(spec);
  const int span = spec.max_difficulty - spec.min_difficulty + 1;
  std::vector<Document> docs;
  docs.reserve(spec.direct_docs + spec.refine_docs);
  for (int i = 0; i < spec.direct_docs; ++i) {
    Rng rng(derive_seed(spec.seed, kDirectTag, static_cast<std::uint64_t>(i)));
    const Problem p = gen_problem(rng, spec.min_difficulty + static_cast<int>(rng.below(span)),
                                  Partition::train, spec.split_seed);
    Document d{p.id, DocKind::direct, p.question, p.answer, p.question, "", false};
    const double rate = first_trap_step(p) ? rates.trap : rates.other;
    if (rng.bernoulli(rate)) {
      d.text = render_trace(p, rng).text;
      d.erroneous = true;
    } else {
      d.text = render_trace(p).text;
    }
    docs.push_back(std::move(d));
  }
  for (int i = 0; i < spec.refine_docs; ++i) {
    Rng rng(derive_seed(spec.seed, kRefineTag, static_cast<std::uint64_t>(i)));
    const Problem p = gen_problem(rng, spec.min_difficulty + static_cast<int>(rng.below(span)),
                                  Partition::train, spec.split_seed);
    const Trace good = render_trace(p);
    const Trace bad = render_trace(p, rng);
    Document d{p.id, DocKind::refine, p.question, p.answer, "", good.text, false};
    d.prompt = lm::render_refine_prompt(templates.refine, p.question, good.text, bad.text);
    if (rng.bernoulli(spec.eps_refine)) {
      d.text = bad.text;
      d.erroneous = true;
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<Problem> gen_problems(std::uint64_t seed, std::size_t n, Partition part,
                                  std::uint64_t split_seed, int min_difficulty,
                                  int max_difficulty) {
  require(n >= 1, Errc::invalid_argument, "problem count must be >= 1");
  require(min_difficulty >= kMinDifficulty && max_difficulty <= kMaxDifficulty &&
              min_difficulty <= max_difficulty,
          Errc::invalid_argument, "difficulty range must lie within [2, 4]");
  Rng rng(seed);
  std::unordered_set<std::uint64_t> seen;
  std::vector<Problem> out;
  const int span = max_difficulty - min_difficulty + 1;
  while (out.size() < n) {
    Problem p = gen_problem(rng, min_difficulty + static_cast<int>(out.size() % span), part,
                            split_seed);
    if (seen.insert(p.id).second) out.push_back(std::move(p));
  }
  return out;
}

std::vector<Problem> gen_benchmark(std::uint64_t seed, std::size_t n, std::uint64_t split_seed,
                                   int min_difficulty, int max_difficulty) {
  return gen_problems(seed, n, Partition::benchmark, split_seed, min_difficulty, max_difficulty);
}

namespace {

using nlohmann::json;

template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      fail(Errc::invalid_argument, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::string corpus_to_jsonl(const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    json j = {{"id", id_hex(d.id)},       {"kind", kind_name(d.kind)}, {"question", d.question},
              {"answer", d.answer},       {"text", d.text},            {"prompt", d.prompt},
              {"erroneous", d.erroneous}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Document> corpus_from_jsonl(const std::string& text) {
  std::vector<Document> docs;
  for_each_line(text, [&](const json& j) {
    Document d;
    d.id = parse_id_hex(j.at("id").get<std::string>());
    const auto kind = j.at("kind").get<std::string>();
    require(kind == "direct" || kind == "refine", Errc::invalid_argument,
            "unknown document kind '" + kind + "'");
    d.kind = kind == "direct" ? DocKind::direct : DocKind::refine;
    d.question = j.at("question").get<std::string>();
    d.answer = j.at("answer").get<std::string>();
    d.text = j.at("text").get<std::string>();
    d.prompt = j.value("prompt", d.question);
    d.erroneous = j.value("erroneous", false);
    docs.push_back(std::move(d));
  });
  return docs;
}

std::string problems_to_jsonl(const std::vector<Problem>& problems) {
  std::string out;
  for (const auto& p : problems) {
    json j = {{"id", id_hex(p.id)},
              {"kind", "problem"},
              {"question", p.question},
              {"answer", p.answer},
              {"text", render_trace(p).text}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Problem> problems_from_jsonl(const std::string& text) {
  std::vector<Problem> out;
  for_each_line(text, [&](const json& j) {
    Problem p = parse_question(j.at("question").get<std::string>());
    require(id_hex(p.id) == j.at("id").get<std::string>() &&
                p.answer == j.at("answer").get<std::string>(),
            Errc::invalid_argument, "problem record does not match its question");
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace ssb::task
