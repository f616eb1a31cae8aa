// SPDX-License-Identifier: Apache-2.0
#include "ssb/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "json.hpp"
#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"
#include "ssb/curation/answer.hpp"
#include "ssb/lm/decoder.hpp"
#include "ssb/lm/tokenizer.hpp"

namespace ssb::eval {

namespace {

using nlohmann::json;

struct Greedy {
  std::string text;
  std::size_t len = 0;
  bool truncated = false;
  bool overflow = false;
};

Greedy greedy_reply(const lm::Model& model, const lm::ChatMessages& prompt, int max_new) {
  Greedy g;
  try {
    const auto enc = lm::encode_chat(prompt);
    lm::SampleOptions opts;
    opts.temperature = 0.0;
    opts.max_new = max_new;
    Rng unused(0);
    const auto gen = lm::sample(model, enc.tokens, opts, unused);
    g.text = lm::Tokenizer::standard().decode(gen.tokens);
    g.len = gen.tokens.size();
    g.truncated = !gen.stopped;
  } catch (const Error& e) {
    if (e.code() != Errc::sequence_too_long) throw;
    g.overflow = true;
  }
  return g;
}

bool matches(const std::optional<std::string>& parsed, const std::string& answer) {
  return parsed && *parsed == curation::canonical_answer(answer);
}

}  // namespace

double EvalReport::mean_completion_len() const {
  if (records.empty()) return 0.0;
  double s = 0;
  for (const auto& r : records) s += static_cast<double>(r.completion_len);
  return s / static_cast<double>(records.size());
}

EvalReport pass_at_1(const lm::Model& model, const std::vector<task::Problem>& benchmark,
                     const DecodeConfig& cfg, const std::string& model_tag,
                     const std::string& benchmark_tag) {
  require(!benchmark.empty(), Errc::invalid_argument, "empty benchmark");
  EvalReport rep;
  rep.model_tag = model_tag;
  rep.benchmark_tag = benchmark_tag;
  for (const auto& p : benchmark) {
    const auto g = greedy_reply(
        model, {{lm::Role::system, cfg.templates.system}, {lm::Role::user, p.question}},
        cfg.max_new);
    QuestionRecord r;
    r.id = p.id;
    r.question = p.question;
    r.answer = p.answer;
    r.overflow = g.overflow;
    r.truncated = g.truncated;
    r.completion_len = g.len;
    r.response = g.text;
    if (!g.overflow) r.parsed = curation::extract_boxed_answer(g.text);
    r.correct = !g.overflow && matches(r.parsed, p.answer);
    rep.correct += r.correct;
    rep.records.push_back(std::move(r));
  }
  return rep;
}

double pass_at_1_from_records(const std::vector<QuestionRecord>& records) {
  if (records.empty()) return 0.0;
  std::size_t c = 0;
  for (const auto& r : records) c += r.correct ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(records.size());
}

std::string records_to_jsonl(const EvalReport& report) {
  std::string out;
  for (const auto& r : report.records) {
    json j = {{"model", report.model_tag},
              {"benchmark", report.benchmark_tag},
              {"id", task::id_hex(r.id)},
              {"question", r.question},
              {"answer", r.answer},
              {"parsed", r.parsed ? json(*r.parsed) : json(nullptr)},
              {"correct", r.correct ? 1 : 0},
              {"completion_len", r.completion_len},
              {"truncated", r.truncated},
              {"overflow", r.overflow},
              {"response", r.response}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

EvalReport records_from_jsonl(const std::string& text) {
  EvalReport rep;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      rep.model_tag = j.at("model");
      rep.benchmark_tag = j.at("benchmark");
      QuestionRecord r;
      r.id = task::parse_id_hex(j.at("id"));
      r.question = j.at("question");
      r.answer = j.at("answer");
      if (!j.at("parsed").is_null()) r.parsed = j.at("parsed").get<std::string>();
      r.correct = j.at("correct").get<int>() != 0;
      r.completion_len = j.at("completion_len");
      r.truncated = j.at("truncated");
      r.overflow = j.at("overflow");
      r.response = j.at("response");
      rep.correct += r.correct;
      rep.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(Errc::invalid_argument, std::string("eval record: ") + e.what());
    }
  }
  return rep;
}

PremiseResult premise_probe(const lm::Model& model, const std::vector<task::Problem>& problems,
                            const DecodeConfig& cfg, std::uint64_t seed) {
  PremiseResult res;
  for (const auto& p : problems) {
    Rng rng(derive_seed(seed, p.id));
    const auto wrong = task::render_trace(p, rng);
    const auto prompt =
        lm::render_refine_prompt(cfg.templates.refine, p.question, task::render_trace(p).text, wrong.text);
    const auto free = greedy_reply(
        model, {{lm::Role::system, cfg.templates.system}, {lm::Role::user, p.question}}, cfg.max_new);
    const auto hinted = greedy_reply(
        model, {{lm::Role::system, cfg.templates.system}, {lm::Role::user, prompt}}, cfg.max_new);
    ++res.n;
    res.hint_free_correct += !free.overflow && matches(curation::extract_boxed_answer(free.text), p.answer);
    res.hinted_correct += !hinted.overflow && matches(curation::extract_boxed_answer(hinted.text), p.answer);
  }
  return res;
}

SftResult run_sft_baseline(const lm::Model& base, const std::vector<curation::CuratedPair>& pairs,
                           const lm::LoraConfig& lora, const distill::DistillConfig& cfg,
                           const distill::StepLog& log) {
  cfg.validate();
  require(base.adapters().empty(), Errc::invalid_state, "SFT starts from the base model");
  SftResult res{base, {}};
  lm::attach_lora(res.model, lora);
  struct Item {
    std::vector<int> tokens;
    std::vector<int> targets;
    std::size_t begin;
  };
  std::vector<Item> items;
  std::vector<std::size_t> lengths;
  for (const auto& p : pairs) {
    const auto enc = lm::encode_chat(p.student);
    require(enc.answer_size() > 0, Errc::invalid_argument, "empty refined solution");
    Item it{{enc.tokens.begin(), enc.tokens.begin() + enc.answer_end},
            {enc.tokens.begin() + enc.answer_begin, enc.tokens.begin() + enc.answer_end},
            enc.answer_begin};
    lengths.push_back(enc.answer_size());
    items.push_back(std::move(it));
  }
  lm::Model& model = res.model;
  res.history = distill::train_adapters(
      model, lengths, cfg,
      [&](numerics::Tape& tape, const lm::GraphParams& gp, std::size_t i) {
        const Item& it = items[i];
        // Prompt rows are sliced away before the loss, so they never see a target.
        auto logits = lm::forward_graph(tape, model, gp, it.tokens);
        auto rows = numerics::ops::slice_rows(tape, logits, it.begin - 1, it.tokens.size() - 1);
        return numerics::ops::cross_entropy_rows(tape, rows, it.targets);
      },
      log);
  return res;
}

double token_accuracy(const lm::Model& model, const std::vector<curation::CuratedPair>& pairs) {
  std::size_t hit = 0, total = 0;
  for (const auto& p : pairs) {
    const auto enc = lm::encode_chat(p.student);
    const auto seq = lm::answer_logits(model, p.student);
    for (std::size_t j = 0; j < seq.rows(); ++j) {
      hit += lm::argmax(seq.logits.row(j)) == enc.tokens[enc.answer_begin + j];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * fraction);
  return buf;
}

ComparisonTables compare_report(const std::vector<EvalReport>& reports) {
  require(!reports.empty(), Errc::invalid_argument, "no reports to compare");
  std::vector<std::string> models, benches;
  std::map<std::pair<std::string, std::string>, const EvalReport*> cell;
  std::map<std::string, std::pair<double, std::size_t>> lengths;
  for (const auto& r : reports) {
    if (std::find(models.begin(), models.end(), r.model_tag) == models.end())
      models.push_back(r.model_tag);
    if (std::find(benches.begin(), benches.end(), r.benchmark_tag) == benches.end())
      benches.push_back(r.benchmark_tag);
    const bool fresh = cell.emplace(std::make_pair(r.model_tag, r.benchmark_tag), &r).second;
    require(fresh, Errc::invalid_argument,
            "duplicate report for model '" + r.model_tag + "' on '" + r.benchmark_tag + "'");
    auto& [sum, n] = lengths[r.model_tag];
    sum += r.mean_completion_len() * static_cast<double>(r.size());
    n += r.size();
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"model"};
  for (const auto& b : benches) header.push_back(b);
  header.push_back("mean_completion_len");
  rows.push_back(header);
  for (const auto& m : models) {
    std::vector<std::string> row{m};
    for (const auto& b : benches) {
      auto it = cell.find({m, b});
      row.push_back(it == cell.end() ? "-" : format_percent(it->second->pass_at_1()));
    }
    const auto& [sum, n] = lengths[m];
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", n ? sum / static_cast<double>(n) : 0.0);
    row.push_back(buf);
    rows.push_back(row);
  }
  ComparisonTables t;
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      t.csv += (c ? "," : "") + row[c];
      std::string cellv = row[c];
      if (c == 0) cellv.resize(width[c], ' ');
      else cellv = std::string(width[c] - cellv.size(), ' ') + cellv;
      t.text += (c ? "  " : "") + cellv;
    }
    t.csv += '\n';
    t.text += '\n';
  }
  return t;
}

void compare_report(const std::vector<EvalReport>& reports, const std::filesystem::path& csv_path,
                    const std::filesystem::path& text_path) {
  const auto t = compare_report(reports);
  io::write_atomic(csv_path, t.csv);
  io::write_atomic(text_path, t.text);
}

double mcnemar_one_sided(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0;
  for (std::size_t k = wins; k <= n; ++k) {
    const double lc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    p += std::exp(lc - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, p);
}

PairedCounts paired_counts(const EvalReport& candidate, const EvalReport& reference) {
  require(candidate.size() == reference.size(), Errc::invalid_argument,
          "reports cover different question sets");
  PairedCounts c;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const auto& a = candidate.records[i];
    const auto& b = reference.records[i];
    require(a.id == b.id, Errc::invalid_argument, "reports cover different question sets");
    c.wins += a.correct && !b.correct;
    c.losses += !a.correct && b.correct;
  }
  return c;
}

}  // namespace ssb::eval
