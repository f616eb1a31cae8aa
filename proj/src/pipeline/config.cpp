// SPDX-License-Identifier: Apache-2.0
#include "ssb/pipeline/config.hpp"

#include <unistd.h>

#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>

#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"
#include "ssb/common/rng.hpp"
#include "ssb/lm/chat.hpp"
#include "ssb/lm/prompts.hpp"
#include "ssb/lm/tokenizer.hpp"

namespace ssb::pipeline {

namespace {

using Setter = std::function<std::optional<std::string>(PipelineConfig&, const std::string&)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Field {
  ConfigKey meta;
  Getter get;
  Setter set;
};

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  // Keep doubles recognisable as such in the file.
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

std::string fmt(float v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

template <class T>
std::optional<T> parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) return std::nullopt;
  return v;
}

template <class T, class Acc>
Field number(std::string key, std::string doc, Acc acc) {
  Field f{{std::move(key), std::move(doc)}, {}, {}};
  f.get = [acc](const PipelineConfig& c) {
    const T v = acc(const_cast<PipelineConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) return fmt(v);
    else return std::to_string(v);
  };
  f.set = [acc](PipelineConfig& c, const std::string& s) -> std::optional<std::string> {
    auto v = parse_number<T>(s);
    if (!v) {
      if constexpr (std::is_floating_point_v<T>) return "expected a number, got '" + s + "'";
      else if constexpr (std::is_signed_v<T>) return "expected an integer, got '" + s + "'";
      else return "expected a non-negative integer, got '" + s + "'";
    }
    acc(c) = *v;
    return std::nullopt;
  };
  return f;
}

template <class Acc>
Field text(std::string key, std::string doc, Acc acc) {
  Field f{{std::move(key), std::move(doc)}, {}, {}};
  f.get = [acc](const PipelineConfig& c) { return acc(const_cast<PipelineConfig&>(c)); };
  f.set = [acc](PipelineConfig& c, const std::string& s) -> std::optional<std::string> {
    acc(c) = s;
    return std::nullopt;
  };
  return f;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    std::string item = s.substr(pos, end - pos);
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
    pos = end + 1;
  }
  return out;
}

std::vector<Field> build_fields() {
  using C = PipelineConfig;
  std::vector<Field> f;
  f.push_back(number<std::uint64_t>("seed", "master seed; every module seed is derived from it",
                                    [](C& c) -> auto& { return c.seed; }));

  f.push_back(text("paths.workdir", "artifact root (environment override: SSB_WORKDIR)",
                   [](C& c) -> auto& { return c.paths.workdir; }));
  f.push_back(text("paths.corpus", "pretraining corpus", [](C& c) -> auto& { return c.paths.corpus; }));
  f.push_back(text("paths.base_checkpoint", "pretrained model",
                   [](C& c) -> auto& { return c.paths.base_checkpoint; }));
  f.push_back(text("paths.problems", "problems offered to curation",
                   [](C& c) -> auto& { return c.paths.problems; }));
  f.push_back(text("paths.curated", "curated teacher/student pairs",
                   [](C& c) -> auto& { return c.paths.curated; }));
  f.push_back(text("paths.curation_report", "curation counts and per-problem log",
                   [](C& c) -> auto& { return c.paths.curation_report; }));
  f.push_back(text("paths.logits", "teacher logit store", [](C& c) -> auto& { return c.paths.logits; }));
  f.push_back(text("paths.ssb_checkpoint", "distilled model",
                   [](C& c) -> auto& { return c.paths.ssb_checkpoint; }));
  f.push_back(text("paths.sft_checkpoint", "hard-label baseline",
                   [](C& c) -> auto& { return c.paths.sft_checkpoint; }));
  f.push_back(text("paths.reports", "evaluation records and tables",
                   [](C& c) -> auto& { return c.paths.reports; }));

  f.push_back(number<int>("model.context", "maximum sequence length",
                          [](C& c) -> auto& { return c.model.context; }));
  f.push_back(number<int>("model.layers", "transformer blocks", [](C& c) -> auto& { return c.model.layers; }));
  f.push_back(number<int>("model.width", "residual width", [](C& c) -> auto& { return c.model.width; }));
  f.push_back(number<int>("model.heads", "attention heads; must divide width",
                          [](C& c) -> auto& { return c.model.heads; }));
  f.push_back(number<int>("model.mlp", "hidden units per MLP", [](C& c) -> auto& { return c.model.mlp; }));

  f.push_back(number<int>("corpus.direct_docs", "question -> solution documents",
                          [](C& c) -> auto& { return c.corpus.direct_docs; }));
  f.push_back(number<int>("corpus.refine_docs", "hinted refinement documents",
                          [](C& c) -> auto& { return c.corpus.refine_docs; }));
  f.push_back(number<double>("corpus.eps_direct", "fraction of direct documents with a wrong solution",
                             [](C& c) -> auto& { return c.corpus.eps_direct; }));
  f.push_back(number<double>("corpus.eps_refine", "fraction of refinement documents with a wrong solution",
                             [](C& c) -> auto& { return c.corpus.eps_refine; }));
  f.push_back(number<double>("corpus.trap_error", "error rate of direct documents on sign-trap problems",
                             [](C& c) -> auto& { return c.corpus.trap_error; }));
  f.push_back(number<int>("corpus.min_difficulty", "fewest operators per problem",
                          [](C& c) -> auto& { return c.corpus.min_difficulty; }));
  f.push_back(number<int>("corpus.max_difficulty", "most operators per problem",
                          [](C& c) -> auto& { return c.corpus.max_difficulty; }));

  f.push_back(number<int>("pretrain.epochs", "passes over the corpus",
                          [](C& c) -> auto& { return c.pretrain.epochs; }));
  f.push_back(number<int>("pretrain.batch", "documents per step", [](C& c) -> auto& { return c.pretrain.batch; }));
  f.push_back(number<double>("pretrain.lr", "peak learning rate", [](C& c) -> auto& { return c.pretrain.lr; }));
  f.push_back(number<int>("pretrain.warmup", "linear warmup steps",
                          [](C& c) -> auto& { return c.pretrain.warmup; }));
  f.push_back(number<double>("pretrain.min_lr_ratio", "cosine floor relative to the peak",
                             [](C& c) -> auto& { return c.pretrain.min_lr_ratio; }));
  f.push_back(number<double>("pretrain.clip", "global gradient-norm clip; 0 disables",
                             [](C& c) -> auto& { return c.pretrain.clip; }));
  f.push_back(number<double>("pretrain.weight_decay", "decoupled weight decay",
                             [](C& c) -> auto& { return c.pretrain.weight_decay; }));

  f.push_back(number<int>("curation.problems", "problems processed", [](C& c) -> auto& { return c.problems; }));
  f.push_back(number<int>("curation.target_pairs", "pairs kept, lowest problem ids first",
                          [](C& c) -> auto& { return c.target_pairs; }));
  f.push_back(number<int>("curation.K", "rollouts per problem", [](C& c) -> auto& { return c.curation.K; }));
  f.push_back(number<double>("curation.T_roll", "rollout and refinement temperature",
                             [](C& c) -> auto& { return c.curation.T_roll; }));
  f.push_back(number<int>("curation.max_new", "generation budget per rollout or refinement",
                          [](C& c) -> auto& { return c.curation.max_new; }));
  f.push_back(number<int>("curation.refine_attempts", "refinements sampled per problem",
                          [](C& c) -> auto& { return c.curation.refine_attempts; }));

  f.push_back(number<int>("lora.rank", "adapter rank", [](C& c) -> auto& { return c.lora.rank; }));
  f.push_back(number<float>("lora.alpha", "adapter scale numerator (scale = alpha / rank)",
                            [](C& c) -> auto& { return c.lora.alpha; }));
  {
    Field t{{"lora.targets", "adapted matrices, comma separated (wq wk wv wo w1 w2 or layers.<l>.<name>)"},
            {}, {}};
    t.get = [](const C& c) {
      std::string s;
      for (const auto& x : c.lora.targets) s += (s.empty() ? "" : ",") + x;
      return s;
    };
    t.set = [](C& c, const std::string& s) -> std::optional<std::string> {
      c.lora.targets = split_list(s);
      return std::nullopt;
    };
    f.push_back(std::move(t));
  }

  f.push_back(number<double>("distill.T_KD", "distillation temperature",
                             [](C& c) -> auto& { return c.distill.T_KD; }));
  f.push_back(number<int>("distill.batch", "pairs per optimizer step",
                          [](C& c) -> auto& { return c.distill.batch; }));
  f.push_back(number<int>("distill.epochs", "passes over the curated pairs",
                          [](C& c) -> auto& { return c.distill.epochs; }));
  f.push_back(number<double>("distill.lr", "adapter learning rate", [](C& c) -> auto& { return c.distill.lr; }));
  {
    Field t{{"distill.optimizer", "adam or sgd"}, {}, {}};
    t.get = [](const C& c) { return numerics::optimizer_name(c.distill.optimizer); };
    t.set = [](C& c, const std::string& s) -> std::optional<std::string> {
      if (s != "adam" && s != "sgd") return "expected adam or sgd, got '" + s + "'";
      c.distill.optimizer = numerics::parse_optimizer(s);
      return std::nullopt;
    };
    f.push_back(std::move(t));
  }
  f.push_back(number<double>("distill.ce_weight", "weight of an added hard-label term; 0 keeps it off",
                             [](C& c) -> auto& { return c.distill.ce_weight; }));
  f.push_back(number<double>("distill.clip", "global gradient-norm clip; 0 disables",
                             [](C& c) -> auto& { return c.distill.clip; }));

  f.push_back(number<int>("eval.heldout_size", "questions in the held-out benchmark",
                          [](C& c) -> auto& { return c.eval.heldout_size; }));
  f.push_back(number<int>("eval.hard_size", "questions in the hard benchmark",
                          [](C& c) -> auto& { return c.eval.hard_size; }));
  f.push_back(number<int>("eval.hard_difficulty", "operators per hard question",
                          [](C& c) -> auto& { return c.eval.hard_difficulty; }));
  f.push_back(number<int>("eval.max_new", "greedy generation budget",
                          [](C& c) -> auto& { return c.eval.max_new; }));
  f.push_back(number<int>("eval.length_probe", "held-out questions used to compare completion length",
                          [](C& c) -> auto& { return c.eval.length_probe; }));
  f.push_back(number<int>("eval.premise_size", "questions in the hinted vs hint-free probe",
                          [](C& c) -> auto& { return c.eval.premise_size; }));
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = build_fields();
  return f;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool writable_location(const std::filesystem::path& p) {
  std::error_code ec;
  auto cur = std::filesystem::absolute(p, ec);
  if (ec) return false;
  while (!cur.empty()) {
    if (std::filesystem::exists(cur, ec))
      return std::filesystem::is_directory(cur, ec) && ::access(cur.c_str(), W_OK) == 0;
    if (cur == cur.parent_path()) break;
    cur = cur.parent_path();
  }
  return false;
}

const std::set<std::string>& matrix_names() {
  static const std::set<std::string> s{"wq", "wk", "wv", "wo", "w1", "w2"};
  return s;
}

}  // namespace

void PipelineConfig::derive_seeds() {
  model.seed = derive_seed(seed, tag_hash("model"));
  corpus.seed = derive_seed(seed, tag_hash("corpus"));
  corpus.split_seed = derive_seed(seed, tag_hash("split"));
  pretrain.seed = derive_seed(seed, tag_hash("pretrain"));
  curation.seed = derive_seed(seed, tag_hash("curation"));
  lora.seed = derive_seed(seed, tag_hash("lora"));
  distill.seed = derive_seed(seed, tag_hash("distill"));
  model.vocab = lm::Tokenizer::standard().size();
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.meta);
    return k;
  }();
  return keys;
}

std::string config_value(const PipelineConfig& cfg, const std::string& key) {
  for (const auto& f : fields())
    if (f.meta.key == key) return f.get(cfg);
  fail(Errc::invalid_argument, "unknown config key '" + key + "'");
}

std::size_t worst_case_teacher_tokens(const PipelineConfig& cfg) {
  const int d = std::max(cfg.corpus.max_difficulty, cfg.eval.hard_difficulty);
  // Widest question and trace lines the value bound admits.
  std::string question(static_cast<std::size_t>(std::max(d - 1, 0)), '(');
  question += "9";
  for (int i = 0; i < d; ++i) question += std::string("*9") + (i + 1 < d ? ")" : "");
  std::string trace;
  for (int i = 0; i < d; ++i) trace += "-99*9=-99\n";
  trace += "\\boxed{-99}";
  const lm::PromptTemplates tpl;
  const auto prompt = lm::render_refine_prompt(tpl.refine, question, trace, trace);
  const auto enc = lm::encode_chat({{lm::Role::system, tpl.system}, {lm::Role::user, prompt}});
  return enc.tokens.size() + static_cast<std::size_t>(std::max(cfg.curation.max_new, 0)) + 1;
}

std::vector<std::string> config_violations(const PipelineConfig& c) {
  std::vector<std::string> v;
  auto need = [&](bool ok, const std::string& key, const std::string& constraint) {
    if (!ok) v.push_back(key + " = " + config_value(c, key) + ": " + constraint);
  };
  const auto& p = c.paths;
  need(!p.workdir.empty(), "paths.workdir", "must not be empty");
  for (const auto& [key, rel] : std::vector<std::pair<std::string, std::string>>{
           {"paths.corpus", p.corpus},
           {"paths.base_checkpoint", p.base_checkpoint},
           {"paths.problems", p.problems},
           {"paths.curated", p.curated},
           {"paths.curation_report", p.curation_report},
           {"paths.logits", p.logits},
           {"paths.ssb_checkpoint", p.ssb_checkpoint},
           {"paths.sft_checkpoint", p.sft_checkpoint},
           {"paths.reports", p.reports}}) {
    const std::filesystem::path rp(rel);
    bool ok = !rel.empty() && rp.is_relative();
    for (const auto& part : rp) ok = ok && part != "..";
    need(ok, key, "must be a non-empty path inside the workdir");
  }
  if (!p.workdir.empty())
    need(writable_location(p.workdir), "paths.workdir", "must be creatable and writable");

  const auto& m = c.model;
  need(m.context >= 16, "model.context", "must be >= 16");
  need(m.layers >= 1, "model.layers", "must be >= 1");
  need(m.width >= 2, "model.width", "must be >= 2");
  need(m.heads >= 1 && m.width % std::max(m.heads, 1) == 0, "model.heads",
       "must be >= 1 and divide model.width");
  need(m.mlp >= 1, "model.mlp", "must be >= 1");

  const auto& s = c.corpus;
  need(s.direct_docs >= 1, "corpus.direct_docs", "must be >= 1");
  need(s.refine_docs >= 0, "corpus.refine_docs", "must be >= 0");
  need(s.eps_direct >= 0 && s.eps_direct < 1, "corpus.eps_direct", "must lie in [0, 1)");
  need(s.eps_refine >= 0 && s.eps_refine < 1, "corpus.eps_refine", "must lie in [0, 1)");
  need(s.trap_error >= 0 && s.trap_error <= 1, "corpus.trap_error", "must lie in [0, 1]");
  const std::string drange = "must lie in [" + std::to_string(task::kMinDifficulty) + ", " +
                             std::to_string(task::kMaxDifficulty) + "]";
  need(s.min_difficulty >= task::kMinDifficulty && s.min_difficulty <= task::kMaxDifficulty,
       "corpus.min_difficulty", drange);
  need(s.max_difficulty >= task::kMinDifficulty && s.max_difficulty <= task::kMaxDifficulty,
       "corpus.max_difficulty", drange);
  need(s.min_difficulty <= s.max_difficulty, "corpus.max_difficulty", "must be >= corpus.min_difficulty");

  const auto& pt = c.pretrain;
  need(pt.epochs >= 1, "pretrain.epochs", "must be >= 1");
  need(pt.batch >= 1, "pretrain.batch", "must be >= 1");
  need(pt.lr > 0, "pretrain.lr", "must be > 0");
  need(pt.warmup >= 0, "pretrain.warmup", "must be >= 0");
  need(pt.min_lr_ratio >= 0 && pt.min_lr_ratio <= 1, "pretrain.min_lr_ratio", "must lie in [0, 1]");
  need(pt.clip >= 0, "pretrain.clip", "must be >= 0");
  need(pt.weight_decay >= 0, "pretrain.weight_decay", "must be >= 0");

  need(c.problems >= 1, "curation.problems", "must be >= 1");
  need(c.target_pairs >= 1, "curation.target_pairs", "must be >= 1");
  need(c.curation.K >= 2, "curation.K",
       "must be >= 2 so a problem can have both correct and wrong rollouts");
  need(c.curation.T_roll > 0, "curation.T_roll", "must be > 0");
  need(c.curation.max_new >= 1, "curation.max_new", "must be >= 1");
  need(c.curation.refine_attempts >= 1, "curation.refine_attempts", "must be >= 1");

  need(c.lora.rank >= 1, "lora.rank", "must be >= 1");
  need(c.lora.alpha > 0, "lora.alpha", "must be > 0");
  bool targets_ok = !c.lora.targets.empty();
  for (const auto& t : c.lora.targets) {
    if (matrix_names().count(t)) continue;
    const std::string pre = "layers.";
    const auto dot = t.find('.', pre.size());
    bool ok = t.rfind(pre, 0) == 0 && dot != std::string::npos;
    if (ok) {
      auto l = parse_number<int>(t.substr(pre.size(), dot - pre.size()));
      ok = l && *l >= 0 && *l < m.layers && matrix_names().count(t.substr(dot + 1));
    }
    targets_ok = targets_ok && ok;
  }
  need(targets_ok, "lora.targets",
       "each entry must be one of wq wk wv wo w1 w2 or layers.<l>.<name> with l < model.layers");

  const auto& d = c.distill;
  need(d.T_KD > 1, "distill.T_KD", "must be > 1 (T_KD > 1 softens both distributions)");
  need(d.batch >= 1, "distill.batch", "must be >= 1");
  need(d.epochs >= 1, "distill.epochs", "must be >= 1");
  need(d.lr > 0, "distill.lr", "must be > 0");
  need(d.ce_weight >= 0, "distill.ce_weight", "must be >= 0");
  need(d.clip >= 0, "distill.clip", "must be >= 0");

  const auto& e = c.eval;
  need(e.heldout_size >= 1, "eval.heldout_size", "must be >= 1");
  need(e.hard_size >= 1, "eval.hard_size", "must be >= 1");
  need(e.hard_difficulty >= task::kMinDifficulty && e.hard_difficulty <= task::kMaxDifficulty,
       "eval.hard_difficulty", drange);
  need(e.max_new >= 1, "eval.max_new", "must be >= 1");
  need(e.length_probe >= 1 && e.length_probe <= e.heldout_size, "eval.length_probe",
       "must lie in [1, eval.heldout_size]");
  need(e.premise_size >= 1, "eval.premise_size", "must be >= 1");

  if (v.empty()) {
    const auto worst = worst_case_teacher_tokens(c);
    need(worst <= static_cast<std::size_t>(m.context), "model.context",
         "must hold the longest teacher prompt plus curation.max_new (" + std::to_string(worst) +
             " tokens)");
  }
  return v;
}

PipelineConfig parse_config(const std::string& text, const std::optional<std::string>& workdir) {
  PipelineConfig cfg;
  std::vector<std::string> errors;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.meta.key] = &f;
  std::set<std::string> seen;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      errors.push_back(key + ": unknown key (line " + std::to_string(line_no) + ")");
      continue;
    }
    if (!seen.insert(key).second) {
      errors.push_back(key + ": set more than once (line " + std::to_string(line_no) + ")");
      continue;
    }
    if (auto err = it->second->set(cfg, value)) errors.push_back(key + ": " + *err);
  }
  if (workdir) cfg.paths.workdir = *workdir;
  cfg.derive_seeds();
  for (auto& e : config_violations(cfg)) errors.push_back(std::move(e));
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " config problem(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(Errc::config_error, msg);
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const Error&) {
    fail(Errc::config_error, "cannot read config " + path.string());
  }
  const char* env = std::getenv(kWorkdirEnv);
  return parse_config(text, env && *env ? std::optional<std::string>(env) : std::nullopt);
}

std::string emit_config(const PipelineConfig& cfg) {
  std::string out = "# ssb pipeline configuration\n";
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.meta.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.meta.key.substr(0, dot);
    if (sec != section) {
      out += "\n";
      section = sec;
    }
    out += "# " + f.meta.doc + "\n" + f.meta.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace ssb::pipeline
