// SPDX-License-Identifier: Apache-2.0
#include "ssb/lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ssb/common/error.hpp"
#include "ssb/common/rng.hpp"
#include "ssb/numerics/kernels.hpp"

namespace ssb::lm {
namespace {

constexpr const char* kMatrixSuffixes[] = {"wq", "wk", "wv", "wo", "w1", "w2"};

bool is_matrix_suffix(const std::string& s) {
  return std::find(std::begin(kMatrixSuffixes), std::end(kMatrixSuffixes), s) !=
         std::end(kMatrixSuffixes);
}

Tensor normal_tensor(Rng& rng, std::vector<std::size_t> shape, double std) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal() * std);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  std::vector<std::string> errs;
  if (vocab < 2 || vocab > 512) errs.push_back("vocab must be in [2, 512]");
  if (context < 1) errs.push_back("context must be >= 1");
  if (layers < 1) errs.push_back("layers must be >= 1");
  if (width < 1) errs.push_back("width must be >= 1");
  if (heads < 1) errs.push_back("heads must be >= 1");
  if (heads >= 1 && width % heads != 0) errs.push_back("width must be divisible by heads");
  if (mlp < 1) errs.push_back("mlp must be >= 1");
  if (!errs.empty()) {
    std::string msg = "invalid model config:";
    for (auto& e : errs) msg += " " + e + ";";
    fail(Errc::invalid_argument, msg);
  }
}

std::string Model::layer_name(int layer, const std::string& suffix) {
  return "layers." + std::to_string(layer) + "." + suffix;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(config_.seed, tag_hash("init")));
  const auto V = static_cast<std::size_t>(config_.vocab);
  const auto C = static_cast<std::size_t>(config_.context);
  const auto D = static_cast<std::size_t>(config_.width);
  const auto H = static_cast<std::size_t>(config_.mlp);
  const double s = 0.02;
  const double s_res = 0.02 / std::sqrt(2.0 * config_.layers);
  auto add = [&](const std::string& name, Tensor t) {
    names_.push_back(name);
    params_.emplace(name, std::move(t));
  };
  auto ones = [](std::size_t n) {
    Tensor t({n});
    t.fill(1.0f);
    return t;
  };
  add("tok_emb", normal_tensor(rng, {V, D}, s));
  add("pos_emb", normal_tensor(rng, {C, D}, s));
  for (int l = 0; l < config_.layers; ++l) {
    add(layer_name(l, "ln1.g"), ones(D));
    add(layer_name(l, "ln1.b"), Tensor({D}));
    add(layer_name(l, "wq"), normal_tensor(rng, {D, D}, s));
    add(layer_name(l, "wk"), normal_tensor(rng, {D, D}, s));
    add(layer_name(l, "wv"), normal_tensor(rng, {D, D}, s));
    add(layer_name(l, "wo"), normal_tensor(rng, {D, D}, s_res));
    add(layer_name(l, "ln2.g"), ones(D));
    add(layer_name(l, "ln2.b"), Tensor({D}));
    add(layer_name(l, "w1"), normal_tensor(rng, {D, H}, s));
    add(layer_name(l, "b1"), Tensor({H}));
    add(layer_name(l, "w2"), normal_tensor(rng, {H, D}, s_res));
    add(layer_name(l, "b2"), Tensor({D}));
  }
  add("lnf.g", ones(D));
  add("lnf.b", Tensor({D}));
  add("w_out", normal_tensor(rng, {D, V}, s));
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(Errc::not_found, "no parameter named " + name);
  return it->second;
}

Tensor& Model::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(Errc::not_found, "no parameter named " + name);
  return it->second;
}

std::size_t Model::base_param_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::size_t Model::adapter_param_count() const {
  std::size_t n = 0;
  for (const auto& [_, a] : adapters_) n += a.a.numel() + a.b.numel();
  return n;
}

const Adapter* Model::adapter_for(const std::string& matrix) const {
  auto it = adapters_.find(matrix);
  return it == adapters_.end() ? nullptr : &it->second;
}

std::vector<std::string> resolve_lora_targets(const ModelConfig& config,
                                              const std::vector<std::string>& targets) {
  std::set<std::string> out;
  for (const auto& t : targets) {
    if (is_matrix_suffix(t)) {
      for (int l = 0; l < config.layers; ++l) out.insert(Model::layer_name(l, t));
      continue;
    }
    // layers.<l>.<suffix>
    const auto dot1 = t.find('.');
    const auto dot2 = t.rfind('.');
    bool ok = t.rfind("layers.", 0) == 0 && dot1 != dot2;
    if (ok) {
      const std::string idx = t.substr(dot1 + 1, dot2 - dot1 - 1);
      const std::string suffix = t.substr(dot2 + 1);
      ok = !idx.empty() && std::all_of(idx.begin(), idx.end(), ::isdigit) &&
           std::stoi(idx) < config.layers && is_matrix_suffix(suffix);
    }
    if (!ok) fail(Errc::invalid_argument, "unknown adapter target '" + t + "'");
    out.insert(t);
  }
  if (out.empty()) fail(Errc::invalid_argument, "adapter target list is empty");
  return {out.begin(), out.end()};
}

AdapterReport attach_lora(Model& model, const LoraConfig& cfg) {
  const auto names = resolve_lora_targets(model.config(), cfg.targets);
  if (cfg.rank < 1) fail(Errc::invalid_argument, "adapter rank must be >= 1");
  Rng rng(derive_seed(cfg.seed, tag_hash("lora")));
  model.adapters().clear();
  for (const auto& name : names) {
    const Tensor& w = model.param(name);
    const std::size_t din = w.rows(), dout = w.cols();
    if (static_cast<std::size_t>(cfg.rank) >= std::min(din, dout))
      fail(Errc::invalid_argument, "adapter rank " + std::to_string(cfg.rank) +
                                       " not below matrix dimension for " + name);
    Adapter a;
    a.a = Tensor({din, static_cast<std::size_t>(cfg.rank)});
    const double std = 1.0 / std::sqrt(static_cast<double>(din));
    for (float& v : a.a.data) v = static_cast<float>(rng.normal() * std);
    a.b = Tensor({static_cast<std::size_t>(cfg.rank), dout});
    model.adapters().emplace(name, std::move(a));
  }
  model.set_lora(cfg);
  AdapterReport r;
  r.trainable = model.adapter_param_count();
  r.total = model.base_param_count() + r.trainable;
  return r;
}

void detach_lora(Model& model) {
  model.adapters().clear();
  model.set_lora(std::nullopt);
}

Model merged(const Model& model) {
  Model out = model;
  const float s = model.adapter_scale();
  for (const auto& [name, ad] : model.adapters()) {
    Tensor& w = out.param(name);
    const std::size_t din = w.rows(), dout = w.cols(), r = ad.a.cols();
    std::vector<float> delta(dout);
    for (std::size_t i = 0; i < din; ++i) {
      std::fill(delta.begin(), delta.end(), 0.0f);
      numerics::kernels().gemv_acc(&ad.a.data[i * r], r, ad.b.data.data(), dout, delta.data());
      for (std::size_t j = 0; j < dout; ++j) w.data[i * dout + j] += s * delta[j];
    }
  }
  detach_lora(out);
  return out;
}

int rank_for_fraction(const ModelConfig& config, const std::vector<std::string>& targets,
                      double target_fraction) {
  Model probe(config);
  const auto names = resolve_lora_targets(config, targets);
  std::size_t per_rank = 0;
  for (const auto& n : names) per_rank += probe.param(n).rows() + probe.param(n).cols();
  const double base = static_cast<double>(probe.base_param_count());
  for (int r = 1;; ++r) {
    const double t = static_cast<double>(per_rank) * r;
    if (t / (base + t) >= target_fraction) return r;
  }
}

std::vector<std::pair<std::string, Tensor*>> trainable_params(Model& model, TrainScope scope) {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (scope == TrainScope::base) {
    for (const auto& n : model.param_names()) out.emplace_back(n, &model.param(n));
  } else {
    for (auto& [name, ad] : model.adapters()) {
      out.emplace_back("lora." + name + ".a", &ad.a);
      out.emplace_back("lora." + name + ".b", &ad.b);
    }
  }
  return out;
}

}  // namespace ssb::lm
