#include "mvp/trainer/optim.hpp"

#include <cmath>
#include <numbers>

#include "mvp/errors.hpp"

namespace mvp {

void OptimizerConfig::validate() const {
  if (!(0.0 < beta1 && beta1 < beta2 && beta2 < 1.0)) throw ConfigError("optimizer: need 0 < beta1 < beta2 < 1");
  if (!(grad_clip > 0.0)) throw ConfigError("optimizer: gradient-norm ceiling must be positive");
  if (!(peak_lr >= 0.0)) throw ConfigError("optimizer: learning rate must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight decay must be non-negative");
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
}

double cosine_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak) {
  if (warmup > total) {
    throw ConfigError("cosine_lr: warmup (" + std::to_string(warmup) + ") exceeds total steps (" +
                      std::to_string(total) + ")");
  }
  if (step > total) throw ContractError("cosine_lr: step beyond total");
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  if (progress >= 1.0) return 0.0;
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const OptimizerConfig& config, double lr) {
  if (grads.size() != params.size()) throw DimensionError("adamw_step: parameter/gradient length mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw DimensionError("adamw_step: optimizer state length mismatch");
  ++state.t;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

AdamW::AdamW(std::vector<Tensor> params) : params_(std::move(params)), state_(params_.size()) {}

void AdamW::step(const OptimizerConfig& config, double lr) {
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    std::span<const double> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    adamw_step(p.mutable_data(), g, state_[i], config, lr);
  }
  ++steps_;
}

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor> params, double ceiling) {
  if (!(ceiling > 0.0)) throw ConfigError("clip_grad_norm: ceiling must be positive");
  const double norm = global_grad_norm(params);
  if (norm > ceiling) {
    const double factor = ceiling / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace mvp
