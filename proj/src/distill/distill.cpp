// SPDX-License-Identifier: Apache-2.0
#include "ssb/distill/distill.hpp"

#include <chrono>
#include <cstdio>

#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"
#include "ssb/distill/pretrain.hpp"
#include "ssb/numerics/prob.hpp"

namespace ssb::distill {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

void DistillConfig::validate() const {
  std::vector<std::string> errs;
  if (!(T_KD > 1.0)) errs.push_back("distill.T_KD must be > 1");
  if (batch < 1) errs.push_back("distill.batch must be >= 1");
  if (epochs < 1) errs.push_back("distill.epochs must be >= 1");
  if (!(lr > 0)) errs.push_back("distill.lr must be > 0");
  if (!(ce_weight >= 0)) errs.push_back("distill.ce_weight must be >= 0");
  if (!(clip >= 0)) errs.push_back("distill.clip must be >= 0");
  if (errs.empty()) return;
  std::string msg;
  for (const auto& e : errs) msg += (msg.empty() ? "" : "; ") + e;
  fail(Errc::config_error, msg);
}

LogitSequence student_logit_sequence(const lm::Model& model, const curation::CuratedPair& pair) {
  return lm::answer_logits(model, pair.student, pair.problem_id);
}

double kd_loss(const LogitSequence& teacher, const LogitSequence& student, double temperature) {
  require(teacher.rows() == student.rows(), Errc::invalid_argument,
          "teacher has " + std::to_string(teacher.rows()) + " rows, student " +
              std::to_string(student.rows()));
  if (teacher.rows() == 0) return 0.0;
  require(teacher.vocab() == student.vocab(), Errc::invalid_argument, "vocab mismatch");
  double sum = 0;
  for (std::size_t j = 0; j < teacher.rows(); ++j)
    sum += numerics::kl_from_logits(teacher.logits.row(j), student.logits.row(j), temperature);
  return temperature * temperature * sum / static_cast<double>(teacher.rows());
}

std::vector<TrainMetrics> train_adapters(lm::Model& model, const std::vector<std::size_t>& lengths,
                                         const DistillConfig& cfg, const ItemLoss& loss,
                                         const StepLog& log) {
  require(!model.adapters().empty(), Errc::invalid_state, "no adapters attached");
  require(!lengths.empty(), Errc::invalid_argument, "no training items");
  auto params = lm::trainable_params(model, lm::TrainScope::adapters);
  std::vector<Tensor*> ptrs;
  for (auto& [n, p] : params) ptrs.push_back(p);
  numerics::OptimizerState opt;
  opt.kind = cfg.optimizer;
  opt.lr = cfg.lr;

  const std::size_t B = static_cast<std::size_t>(cfg.batch);
  std::vector<TrainMetrics> history;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(lengths.size(), derive_seed(cfg.seed, epoch));
    for (std::size_t start = 0; start < order.size(); start += B) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t end = std::min(order.size(), start + B);
      const float inv = 1.0f / static_cast<float>(end - start);
      std::vector<Tensor> grads;
      double loss_sum = 0, len_sum = 0;
      for (std::size_t s = start; s < end; ++s) {
        Tape tape;
        auto gp = lm::bind_params(tape, model, lm::TrainScope::adapters);
        Var l = loss(tape, gp, order[s]);
        tape.backward(l);
        loss_sum += tape.value(l).data[0];
        len_sum += static_cast<double>(lengths[order[s]]);
        auto g = lm::collect_grads(tape, model, gp);
        if (grads.empty()) {
          grads = std::move(g);
          for (auto& t : grads)
            for (auto& x : t.data) x *= inv;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < g[i].numel(); ++j) grads[i].data[j] += inv * g[i].data[j];
        }
      }
      std::vector<Tensor*> gptr;
      for (auto& t : grads) gptr.push_back(&t);
      TrainMetrics m;
      m.step = ++step;
      m.grad_norm = cfg.clip > 0
                        ? numerics::clip_global_norm(gptr, cfg.clip)
                        : numerics::global_norm(std::vector<const Tensor*>(gptr.begin(), gptr.end()));
      std::vector<const Tensor*> cg(gptr.begin(), gptr.end());
      numerics::optimizer_step(ptrs, cg, opt);
      m.kd_loss = loss_sum / static_cast<double>(end - start);
      m.completion_len = len_sum / static_cast<double>(end - start);
      m.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      require(std::isfinite(m.kd_loss) && std::isfinite(m.grad_norm), Errc::invalid_state,
              "non-finite loss or gradient at step " + std::to_string(m.step));
      history.push_back(m);
      if (log) log(m);
    }
  }
  return history;
}

std::vector<TrainMetrics> distill_train(lm::Model& model,
                                        const std::vector<curation::CuratedPair>& pairs,
                                        const logits::LogitStore& store, const DistillConfig& cfg,
                                        const StepLog& log) {
  cfg.validate();
  std::string missing;
  for (const auto& p : pairs)
    if (!store.contains(p.problem_id)) missing += (missing.empty() ? "" : ", ") + std::to_string(p.problem_id);
  if (!missing.empty()) fail(Errc::missing_input, "no stored teacher logits for pair ids: " + missing);

  struct Item {
    std::vector<int> tokens;
    std::size_t begin, end;
    LogitSequence teacher;
  };
  std::vector<Item> items;
  std::vector<std::size_t> lengths;
  for (const auto& p : pairs) {
    auto enc = lm::encode_chat(p.student);
    Item it{{enc.tokens.begin(), enc.tokens.begin() + enc.answer_end}, enc.answer_begin,
            enc.answer_end, store.lookup(p.problem_id)};
    require(it.teacher.rows() == enc.answer_size(), Errc::invalid_argument,
            "stored teacher rows do not match the refined solution of pair " +
                std::to_string(p.problem_id));
    require(it.teacher.rows() == 0 || it.teacher.vocab() == static_cast<std::size_t>(model.config().vocab),
            Errc::invalid_argument, "stored vocabulary differs from the model");
    require(it.teacher.rows() > 0, Errc::invalid_argument,
            "empty refined solution in pair " + std::to_string(p.problem_id));
    lengths.push_back(enc.answer_size());
    items.push_back(std::move(it));
  }
  const float T = static_cast<float>(cfg.T_KD);
  return train_adapters(
      model, lengths, cfg,
      [&](Tape& tape, const lm::GraphParams& gp, std::size_t i) {
        const Item& it = items[i];
        Var logits = lm::forward_graph(tape, model, gp, it.tokens);
        Var rows = numerics::ops::slice_rows(tape, logits, it.begin - 1, it.end - 1);
        Var l = numerics::ops::kd_loss(tape, it.teacher.logits, rows, T);
        if (cfg.ce_weight > 0) {
          std::vector<int> targets(it.tokens.begin() + it.begin, it.tokens.begin() + it.end);
          Var ce = numerics::ops::cross_entropy_rows(tape, rows, targets);
          l = numerics::ops::add(tape, l, numerics::ops::scale(tape, ce, static_cast<float>(cfg.ce_weight)));
        }
        return l;
      },
      log);
}

std::string metrics_csv(const std::vector<TrainMetrics>& history) {
  std::string out = "step,kd_loss,grad_norm,completion_len\n";
  char buf[192];
  for (const auto& m : history) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.3f\n", m.step, m.kd_loss, m.grad_norm,
                  m.completion_len);
    out += buf;
  }
  return out;
}

std::string timing_csv(const std::vector<TrainMetrics>& history) {
  std::string out = "step,ms\n";
  char buf[64];
  for (const auto& m : history) {
    std::snprintf(buf, sizeof buf, "%d,%.1f\n", m.step, m.ms);
    out += buf;
  }
  return out;
}

std::vector<TrainMetrics> metrics_from_csv(const std::string& text) {
  std::vector<TrainMetrics> out;
  std::size_t pos = text.find('\n');
  require(pos != std::string::npos && text.substr(0, pos) == "step,kd_loss,grad_norm,completion_len",
          Errc::invalid_argument, "not a metrics file");
  ++pos;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    TrainMetrics m;
    require(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &m.step, &m.kd_loss, &m.grad_norm,
                        &m.completion_len) == 4,
            Errc::invalid_argument, "bad metrics row: " + line);
    out.push_back(m);
  }
  return out;
}

void emit_metrics(const std::vector<TrainMetrics>& history, const std::filesystem::path& path) {
  require(!history.empty(), Errc::invalid_argument, "empty metrics history");
  io::write_atomic(path, metrics_csv(history));
}

double moving_average(const std::vector<TrainMetrics>& history, std::size_t step, std::size_t w) {
  require(step >= 1 && step <= history.size() && w >= 1, Errc::invalid_argument,
          "moving average window out of range");
  const std::size_t first = step >= w ? step - w : 0;
  double s = 0;
  for (std::size_t i = first; i < step; ++i) s += history[i].kd_loss;
  return s / static_cast<double>(step - first);
}

}  // namespace ssb::distill
