#include "mvp/trainer/model.hpp"

#include <algorithm>
#include <cmath>

#include "mvp/errors.hpp"
#include "mvp/tensor/ops.hpp"

namespace mvp {

void LoRAConfig::validate() const {
  if (rank == 0) throw ConfigError("lora: rank must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("lora: alpha must be positive");
}

Tensor lora_forward(const Tensor& x, const Tensor& w_frozen, const Tensor& a, const Tensor& b, std::size_t rank,
                    double alpha) {
  const auto out = w_frozen.rows(), in = w_frozen.cols();
  if (rank == 0 || rank > std::min(in, out)) {
    throw ConfigError("lora: rank " + std::to_string(rank) + " exceeds min(" + std::to_string(in) + ", " +
                      std::to_string(out) + ")");
  }
  if (a.rows() != rank || a.cols() != in || b.rows() != out || b.cols() != rank) {
    throw DimensionError("lora: factor shapes " + shape_str(a.shape()) + ", " + shape_str(b.shape()) +
                         " do not fit rank " + std::to_string(rank) + " and weight " + shape_str(w_frozen.shape()));
  }
  const auto base = matmul_nt(x, w_frozen);
  const auto delta = matmul_nt(matmul_nt(x, a), b);
  return add(base, scale(delta, alpha / static_cast<double>(rank)));
}

LoRALinear LoRALinear::init(std::size_t in, std::size_t out, const LoRAConfig& lora, double stddev, Rng& rng) {
  lora.validate();
  if (lora.rank > std::min(in, out)) {
    throw ConfigError("lora: rank " + std::to_string(lora.rank) + " exceeds min(" + std::to_string(in) + ", " +
                      std::to_string(out) + ")");
  }
  LoRALinear m;
  m.weight = randn({out, in}, stddev, rng, false);
  m.bias = Tensor::zeros({1, out}, false);
  m.lora_a = randn({lora.rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, true);
  m.lora_b = Tensor::zeros({out, lora.rank}, true);
  m.lora = lora;
  return m;
}

Tensor LoRALinear::operator()(const Tensor& x) const {
  return add_row(lora_forward(x, weight, lora_a, lora_b, lora.rank, lora.alpha), bias);
}

StubLanguageModel StubLanguageModel::init(std::size_t width, std::size_t hidden, const LoRAConfig& lora,
                                          double stddev, Rng& rng) {
  StubLanguageModel lm;
  for (int layer = 0; layer < 2; ++layer) {
    lm.maps.push_back(LoRALinear::init(width, hidden, lora, stddev, rng));
    lm.maps.push_back(LoRALinear::init(hidden, width, lora, stddev, rng));
  }
  return lm;
}

Tensor StubLanguageModel::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < maps.size(); i += 2) h = add(h, maps[i + 1](gelu(maps[i](h))));
  return h;
}

namespace {
std::string map_name(const std::string& prefix, std::size_t i) {
  return prefix + ".layer" + std::to_string(i / 2) + (i % 2 == 0 ? ".up." : ".down.");
}
}  // namespace

std::vector<NamedTensor> StubLanguageModel::frozen_parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    out.push_back({map_name(prefix, i) + "weight", maps[i].weight});
    out.push_back({map_name(prefix, i) + "bias", maps[i].bias});
  }
  return out;
}

std::vector<NamedTensor> StubLanguageModel::adapter_parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    out.push_back({map_name(prefix, i) + "lora_a", maps[i].lora_a});
    out.push_back({map_name(prefix, i) + "lora_b", maps[i].lora_b});
  }
  return out;
}

BridgeModel BridgeModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.perceiver.validate();
  config.lora.validate();
  if (config.d_llm == 0 || config.lm_hidden == 0) throw ConfigError("model: d_llm and lm_hidden must be positive");
  BridgeModel model;
  model.config = config;
  Rng perceiver_rng(mix_seed(seed, 1));
  model.perceiver = init_perceiver(config.perceiver, perceiver_rng);
  Rng proj_rng(mix_seed(seed, 2));
  model.projection = OutputProjection::init(config.perceiver.d, config.d_llm,
                                            1.0 / std::sqrt(static_cast<double>(config.perceiver.d)), proj_rng);
  Rng lm_rng(mix_seed(seed, 3));
  model.lm = StubLanguageModel::init(config.d_llm, config.lm_hidden, config.lora, config.lm_init_std, lm_rng);
  return model;
}

Tensor BridgeModel::forward(const MultiLevelFeatures& features, ForwardTrace* trace) const {
  return lm(projection(perceiver_forward(features, perceiver, config.perceiver, trace)));
}

std::vector<NamedTensor> BridgeModel::named_parameters() const {
  auto out = perceiver.named_parameters();
  out.push_back({"perceiver.proj.weight", projection.w});
  out.push_back({"perceiver.proj.bias", projection.b});
  for (auto& p : lm.frozen_parameters()) out.push_back(std::move(p));
  for (auto& p : lm.adapter_parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<NamedTensor> BridgeModel::trainable_parameters(int stage) const {
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
  auto out = perceiver.named_parameters();
  out.push_back({"perceiver.proj.weight", projection.w});
  out.push_back({"perceiver.proj.bias", projection.b});
  if (stage >= 2) {
    for (auto& p : lm.adapter_parameters()) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mvp
