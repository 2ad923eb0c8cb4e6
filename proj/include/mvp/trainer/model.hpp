#pragma once

// The trainable stack used by the curriculum: perceiver → affine bridge into
// the language width → a small frozen sequence model whose affine maps all
// carry LoRA adapters.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mvp/perceiver/perceiver.hpp"
#include "mvp/tensor/checkpoint.hpp"
#include "mvp/tensor/random.hpp"

namespace mvp {

struct LoRAConfig {
  std::size_t rank = 4;  // 128 at full scale
  double alpha = 8.0;    // 256 at full scale

  double scaling() const { return alpha / static_cast<double>(rank); }
  void validate() const;
};

/// x·Wᵀ + (α/r)·(x·Aᵀ)·Bᵀ with W: out×in frozen, A: r×in, B: out×r.
/// A rank above min(in, out) is a ConfigError.
Tensor lora_forward(const Tensor& x, const Tensor& w_frozen, const Tensor& a, const Tensor& b, std::size_t rank,
                    double alpha);

struct LoRALinear {
  Tensor weight;  // out × in, frozen
  Tensor bias;    // 1 × out, frozen
  Tensor lora_a;  // r × in, random init
  Tensor lora_b;  // out × r, zero init
  LoRAConfig lora;

  static LoRALinear init(std::size_t in, std::size_t out, const LoRAConfig& lora, double stddev, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Two residual blocks x ← x + down(gelu(up(x))); every map is a LoRALinear.
struct StubLanguageModel {
  std::vector<LoRALinear> maps;  // layer0.up, layer0.down, layer1.up, layer1.down

  static StubLanguageModel init(std::size_t width, std::size_t hidden, const LoRAConfig& lora, double stddev,
                                Rng& rng);
  Tensor operator()(const Tensor& x) const;
  std::vector<NamedTensor> frozen_parameters(const std::string& prefix = "lm") const;
  std::vector<NamedTensor> adapter_parameters(const std::string& prefix = "lm") const;
};

struct ModelConfig {
  PerceiverConfig perceiver;
  std::size_t d_llm = 32;
  std::size_t lm_hidden = 64;
  LoRAConfig lora;
  double lm_init_std = 0.1;
};

struct BridgeModel {
  ModelConfig config;
  PerceiverParams perceiver;
  OutputProjection projection;
  StubLanguageModel lm;
  int completed_stage = 0;

  static BridgeModel init(const ModelConfig& config, std::uint64_t seed);

  Tensor forward(const MultiLevelFeatures& features, ForwardTrace* trace = nullptr) const;

  /// Every parameter in checkpoint order.
  std::vector<NamedTensor> named_parameters() const;
  /// Stage 1: perceiver and projection. Stages 2–3: those plus the LoRA factors.
  std::vector<NamedTensor> trainable_parameters(int stage) const;
};

}  // namespace mvp
