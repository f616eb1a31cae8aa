// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer: token + learned position embeddings, pre-norm
// blocks (causal multi-head attention, GELU MLP), final layernorm and an
// untied output projection. Low-rank adapters can be attached to any of the
// per-layer projection matrices.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssb/numerics/tensor.hpp"

namespace ssb::lm {

using numerics::Tensor;

struct ModelConfig {
  int vocab = 0;
  int context = 256;
  int layers = 2;
  int width = 64;
  int heads = 4;
  int mlp = 256;
  std::uint64_t seed = 1;

  // Throws invalid-argument listing the offending fields.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LoraConfig {
  int rank = 4;
  float alpha = 8.0f;
  // Matrix identifiers: "wq" (every layer) or "layers.<l>.wq". Valid
  // matrices are wq, wk, wv, wo, w1, w2.
  std::vector<std::string> targets = {"wq", "wv"};
  std::uint64_t seed = 7;

  float scale() const { return alpha / static_cast<float>(rank); }
  bool operator==(const LoraConfig&) const = default;
};

// Low-rank update W + scale * A B with A [d_in x r] and B [r x d_out].
struct Adapter {
  Tensor a;
  Tensor b;
};

class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Base parameters in a fixed order.
  const std::vector<std::string>& param_names() const { return names_; }
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  bool has_param(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t base_param_count() const;

  // Adapters keyed by the full matrix name, e.g. "layers.0.wq".
  const std::map<std::string, Adapter>& adapters() const { return adapters_; }
  std::map<std::string, Adapter>& adapters() { return adapters_; }
  const std::optional<LoraConfig>& lora() const { return lora_; }
  void set_lora(std::optional<LoraConfig> cfg) { lora_ = std::move(cfg); }
  std::size_t adapter_param_count() const;

  const Adapter* adapter_for(const std::string& matrix) const;
  float adapter_scale() const { return lora_ ? lora_->scale() : 0.0f; }

  static std::string layer_name(int layer, const std::string& suffix);

 private:
  ModelConfig config_;
  std::vector<std::string> names_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Adapter> adapters_;
  std::optional<LoraConfig> lora_;
};

struct AdapterReport {
  std::size_t trainable = 0;
  std::size_t total = 0;  // base + adapter parameters
  double fraction() const { return total ? static_cast<double>(trainable) / total : 0.0; }
};

// Expands identifiers to full matrix names; throws invalid-argument on
// unknown identifiers.
std::vector<std::string> resolve_lora_targets(const ModelConfig& config,
                                              const std::vector<std::string>& targets);

// Adds adapters (A random, B zero) so the adapted model initially equals the
// base. Replaces any adapters already attached.
AdapterReport attach_lora(Model& model, const LoraConfig& cfg);
void detach_lora(Model& model);

// Copy with every adapter folded into its base matrix.
Model merged(const Model& model);

// Smallest rank whose trainable fraction is >= target_fraction.
int rank_for_fraction(const ModelConfig& config, const std::vector<std::string>& targets,
                      double target_fraction);

enum class TrainScope { base, adapters };

// Pointers into the model's trainable tensors, in a stable order.
std::vector<std::pair<std::string, Tensor*>> trainable_params(Model& model, TrainScope scope);

}  // namespace ssb::lm
