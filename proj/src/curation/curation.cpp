// SPDX-License-Identifier: Apache-2.0
#include "ssb/curation/curation.hpp"

#include <algorithm>

#include "json.hpp"
#include "ssb/common/error.hpp"
#include "ssb/curation/answer.hpp"
#include "ssb/lm/decoder.hpp"
#include "ssb/lm/tokenizer.hpp"

namespace ssb::curation {

namespace {

using nlohmann::json;

constexpr std::uint64_t kRolloutTag = tag_hash("rollout");
constexpr std::uint64_t kSelectTag = tag_hash("select");
constexpr std::uint64_t kRefineTag = tag_hash("refine");

struct Sampled {
  std::string text;
  bool truncated = false;
};

Sampled sample_reply(const lm::Model& model, const lm::ChatMessages& prompt, double temperature,
                     int max_new, std::uint64_t seed) {
  const auto enc = lm::encode_chat(prompt);
  lm::SampleOptions opts;
  opts.temperature = temperature;
  opts.max_new = max_new;
  Rng rng(seed);
  const auto gen = lm::sample(model, enc.tokens, opts, rng);
  return {lm::Tokenizer::standard().decode(gen.tokens), !gen.stopped};
}

std::size_t encoded_length(const lm::ChatMessages& m) { return lm::encode_chat(m).tokens.size(); }

json messages_json(const lm::ChatMessages& m) {
  json a = json::array();
  for (const auto& msg : m) a.push_back({{"role", lm::role_name(msg.role)}, {"text", msg.text}});
  return a;
}

lm::ChatMessages messages_from(const json& a) {
  lm::ChatMessages m;
  for (const auto& x : a)
    m.push_back({lm::parse_role(x.at("role").get<std::string>()), x.at("text").get<std::string>()});
  return m;
}

json answer_json(const std::optional<std::string>& a) { return a ? json(*a) : json(nullptr); }

std::optional<std::string> answer_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::string>();
}

Outcome parse_outcome(const std::string& s) {
  for (auto o : {Outcome::accepted, Outcome::all_correct, Outcome::all_wrong,
                 Outcome::refine_reject, Outcome::overflow})
    if (outcome_name(o) == s) return o;
  fail(Errc::invalid_argument, "unknown outcome '" + s + "'");
}

}  // namespace

void CurationConfig::validate() const {
  std::vector<std::string> errs;
  if (K < 2) errs.push_back("curate.K must be >= 2 so a problem can have both outcomes");
  if (!(T_roll >= 0.0)) errs.push_back("curate.T_roll must be >= 0");
  if (max_new < 1) errs.push_back("curate.max_new must be >= 1");
  if (refine_attempts < 1) errs.push_back("curate.refine_attempts must be >= 1");
  try {
    lm::template_segments(templates.refine);
  } catch (const Error& e) {
    errs.push_back(std::string("curate refine template: ") + e.what());
  }
  if (errs.empty()) return;
  std::string msg;
  for (const auto& e : errs) msg += (msg.empty() ? "" : "; ") + e;
  fail(Errc::config_error, msg);
}

std::vector<Rollout> generate_rollouts(const lm::Model& model, const task::Problem& problem,
                                       const CurationConfig& cfg) {
  const lm::ChatMessages prompt{{lm::Role::system, cfg.templates.system},
                                {lm::Role::user, problem.question}};
  std::vector<Rollout> out;
  for (int k = 0; k < cfg.K; ++k) {
    Rollout r;
    r.seed = derive_seed(cfg.seed, problem.id, kRolloutTag + static_cast<std::uint64_t>(k));
    auto s = sample_reply(model, prompt, cfg.T_roll, cfg.max_new, r.seed);
    r.text = std::move(s.text);
    r.truncated = s.truncated;
    r.answer = extract_boxed_answer(r.text);
    out.push_back(std::move(r));
  }
  return out;
}

PartitionedRollouts partition(const std::vector<Rollout>& rollouts, const std::string& answer) {
  PartitionedRollouts p;
  const std::string a = canonical_answer(answer);
  for (const auto& r : rollouts) (r.answer && *r.answer == a ? p.correct : p.wrong).push_back(r);
  return p;
}

AnswerCounts count_wrong_answers(const std::vector<Rollout>& wrong) {
  AnswerCounts c;
  for (const auto& r : wrong) ++c[r.answer];
  return c;
}

RepresentativePair select_representatives(const PartitionedRollouts& p, Rng& rng) {
  require(!p.correct.empty() && !p.wrong.empty(), Errc::invalid_argument,
          "representatives need both a correct and a wrong rollout");
  RepresentativePair r;
  r.wrong_counts = count_wrong_answers(p.wrong);
  int best = 0;
  for (const auto& [a, n] : r.wrong_counts) best = std::max(best, n);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < p.wrong.size(); ++i)
    if (r.wrong_counts.at(p.wrong[i].answer) == best) candidates.push_back(i);
  r.correct_index = rng.below(p.correct.size());
  r.wrong_index = candidates[rng.below(candidates.size())];
  r.correct = p.correct[r.correct_index];
  r.wrong = p.wrong[r.wrong_index];
  return r;
}

std::string build_ssb_prompt(const std::string& question, const std::string& correct,
                             const std::string& wrong, const lm::PromptTemplates& templates) {
  return lm::render_refine_prompt(templates.refine, question, correct, wrong);
}

RefineResult refine_and_filter(const lm::Model& model, const task::Problem& problem,
                               const std::string& ssb_prompt, const CurationConfig& cfg) {
  const lm::ChatMessages prompt{{lm::Role::system, cfg.templates.system},
                                {lm::Role::user, ssb_prompt}};
  RefineResult res;
  for (int i = 0; i < cfg.refine_attempts; ++i) {
    auto s = sample_reply(model, prompt, cfg.T_roll, cfg.max_new,
                          derive_seed(cfg.seed, problem.id, kRefineTag + static_cast<std::uint64_t>(i)));
    RefineAttempt a{std::move(s.text), std::nullopt, s.truncated};
    a.answer = extract_boxed_answer(a.text);
    const bool ok = a.answer && *a.answer == canonical_answer(problem.answer);
    res.attempts.push_back(a);
    if (ok) {
      res.accepted = a.text;
      break;
    }
  }
  return res;
}

CuratedPair make_pair(const task::Problem& problem, const std::string& ssb_prompt,
                      const std::string& refined, const lm::PromptTemplates& templates) {
  CuratedPair c;
  c.problem_id = problem.id;
  c.question = problem.question;
  c.answer = problem.answer;
  c.refined = refined;
  c.teacher = {{lm::Role::system, templates.system},
               {lm::Role::user, ssb_prompt},
               {lm::Role::assistant, refined}};
  c.student = {{lm::Role::system, templates.system},
               {lm::Role::user, problem.question},
               {lm::Role::assistant, refined}};
  return c;
}

std::string outcome_name(Outcome o) {
  switch (o) {
    case Outcome::accepted: return "accepted";
    case Outcome::all_correct: return "all-correct";
    case Outcome::all_wrong: return "all-wrong";
    case Outcome::refine_reject: return "refine-reject";
    case Outcome::overflow: return "overflow";
  }
  return "?";
}

CurationResult curate_dataset(const lm::Model& model, const std::vector<task::Problem>& problems,
                              const CurationConfig& cfg) {
  cfg.validate();
  require(model.adapters().empty(), Errc::invalid_state, "curation runs on the base model");
  const auto ctx = static_cast<std::size_t>(model.config().context);
  CurationResult res;
  auto& rep = res.report;
  for (const auto& problem : problems) {
    ++rep.processed;
    ProblemLog log;
    log.problem_id = problem.id;
    log.question = problem.question;
    log.answer = problem.answer;
    auto finish = [&](Outcome o, std::string reason = {}) {
      log.outcome = o;
      log.reason = std::move(reason);
      switch (o) {
        case Outcome::accepted: ++rep.accepted; break;
        case Outcome::all_correct: ++rep.all_correct_skips; break;
        case Outcome::all_wrong: ++rep.all_wrong_skips; break;
        case Outcome::refine_reject: ++rep.refine_rejects; break;
        case Outcome::overflow: ++rep.overflow_skips; break;
      }
      rep.log.push_back(std::move(log));
    };
    try {
      log.rollouts = generate_rollouts(model, problem, cfg);
    } catch (const Error& e) {
      finish(Outcome::overflow, e.what());
      continue;
    }
    const auto parts = partition(log.rollouts, problem.answer);
    if (parts.wrong.empty()) {
      finish(Outcome::all_correct);
      continue;
    }
    if (parts.correct.empty()) {
      finish(Outcome::all_wrong);
      continue;
    }
    Rng rng(derive_seed(cfg.seed, problem.id, kSelectTag));
    const auto reps = select_representatives(parts, rng);
    // Map partition indices back to rollout order for the log.
    auto locate = [&](bool correct, std::size_t idx) {
      int seen = 0;
      for (std::size_t i = 0; i < log.rollouts.size(); ++i) {
        const auto& r = log.rollouts[i];
        const bool is_correct = r.answer && *r.answer == canonical_answer(problem.answer);
        if (is_correct == correct && seen++ == static_cast<int>(idx)) return static_cast<int>(i);
      }
      return -1;
    };
    log.correct_rollout = locate(true, reps.correct_index);
    log.wrong_rollout = locate(false, reps.wrong_index);
    const std::string prompt =
        build_ssb_prompt(problem.question, reps.correct.text, reps.wrong.text, cfg.templates);
    RefineResult refined;
    try {
      refined = refine_and_filter(model, problem, prompt, cfg);
    } catch (const Error& e) {
      finish(Outcome::overflow, e.what());
      continue;
    }
    log.refinements = refined.attempts;
    if (!refined.accepted) {
      const auto& last = refined.attempts.back();
      finish(Outcome::refine_reject,
             "refined answer " + (last.answer ? *last.answer : std::string("absent")));
      continue;
    }
    CuratedPair pair = make_pair(problem, prompt, *refined.accepted, cfg.templates);
    std::size_t teacher_len = 0;
    try {
      teacher_len = encoded_length(pair.teacher);
      encoded_length(pair.student);
    } catch (const Error& e) {
      finish(Outcome::overflow, e.what());
      continue;
    }
    if (teacher_len > ctx) {
      finish(Outcome::overflow, "teacher sequence length " + std::to_string(teacher_len) +
                                    " exceeds context " + std::to_string(ctx));
      continue;
    }
    res.pairs.push_back(std::move(pair));
    finish(Outcome::accepted);
  }
  std::stable_sort(res.pairs.begin(), res.pairs.end(),
                   [](const CuratedPair& a, const CuratedPair& b) { return a.problem_id < b.problem_id; });
  return res;
}

std::string pairs_to_jsonl(const std::vector<CuratedPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    json j = {{"problem_id", task::id_hex(p.problem_id)},
              {"question", p.question},
              {"answer", p.answer},
              {"teacher_messages", messages_json(p.teacher)},
              {"student_messages", messages_json(p.student)},
              {"refined_text", p.refined}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<CuratedPair> pairs_from_jsonl(const std::string& text) {
  std::vector<CuratedPair> out;
  std::size_t pos = 0, lineno = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++lineno;
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CuratedPair p;
      p.problem_id = task::parse_id_hex(j.at("problem_id").get<std::string>());
      p.question = j.at("question").get<std::string>();
      p.answer = j.at("answer").get<std::string>();
      p.teacher = messages_from(j.at("teacher_messages"));
      p.student = messages_from(j.at("student_messages"));
      p.refined = j.at("refined_text").get<std::string>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      fail(Errc::invalid_argument, "curated line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string report_to_json(const CurationReport& r) {
  json log = json::array();
  for (const auto& p : r.log) {
    json rollouts = json::array();
    for (const auto& x : p.rollouts)
      rollouts.push_back({{"text", x.text},
                          {"answer", answer_json(x.answer)},
                          {"seed", task::id_hex(x.seed)},
                          {"truncated", x.truncated}});
    json refs = json::array();
    for (const auto& x : p.refinements)
      refs.push_back(
          {{"text", x.text}, {"answer", answer_json(x.answer)}, {"truncated", x.truncated}});
    log.push_back({{"problem_id", task::id_hex(p.problem_id)},
                   {"question", p.question},
                   {"answer", p.answer},
                   {"outcome", outcome_name(p.outcome)},
                   {"reason", p.reason},
                   {"correct_rollout", p.correct_rollout},
                   {"wrong_rollout", p.wrong_rollout},
                   {"rollouts", rollouts},
                   {"refinements", refs}});
  }
  json j = {{"processed", r.processed},
            {"all_correct_skips", r.all_correct_skips},
            {"all_wrong_skips", r.all_wrong_skips},
            {"refine_rejects", r.refine_rejects},
            {"overflow_skips", r.overflow_skips},
            {"accepted", r.accepted},
            {"log", log}};
  return j.dump(1) + "\n";
}

CurationReport report_from_json(const std::string& text) {
  CurationReport r;
  try {
    const json j = json::parse(text);
    r.processed = j.at("processed");
    r.all_correct_skips = j.at("all_correct_skips");
    r.all_wrong_skips = j.at("all_wrong_skips");
    r.refine_rejects = j.at("refine_rejects");
    r.overflow_skips = j.at("overflow_skips");
    r.accepted = j.at("accepted");
    for (const auto& p : j.at("log")) {
      ProblemLog l;
      l.problem_id = task::parse_id_hex(p.at("problem_id").get<std::string>());
      l.question = p.at("question");
      l.answer = p.at("answer");
      l.outcome = parse_outcome(p.at("outcome"));
      l.reason = p.at("reason");
      l.correct_rollout = p.at("correct_rollout");
      l.wrong_rollout = p.at("wrong_rollout");
      for (const auto& x : p.at("rollouts"))
        l.rollouts.push_back({x.at("text"), answer_from(x.at("answer")),
                              task::parse_id_hex(x.at("seed").get<std::string>()),
                              x.at("truncated")});
      for (const auto& x : p.at("refinements"))
        l.refinements.push_back({x.at("text"), answer_from(x.at("answer")), x.at("truncated")});
      r.log.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    fail(Errc::invalid_argument, std::string("curation report: ") + e.what());
  }
  return r;
}

}  // namespace ssb::curation
