#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mvp/tensor/tensor.hpp"

namespace mvp {

struct OptimizerConfig {
  double peak_lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-10;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::size_t warmup = 300;

  void validate() const;
};

/// Linear ramp 0 → peak over `warmup` steps, then peak·½(1 + cos(π·progress))
/// down to 0 at `total`. With no decay phase (warmup == total) the ramp
/// endpoint wins and the value at `total` is the peak.
double cosine_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak);

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

/// One decoupled-weight-decay Adam update with bias correction:
///   θ ← θ − lr·wd·θ − lr · m̂ / (√v̂ + ε)
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const OptimizerConfig& config, double lr);

/// AdamW over a fixed list of tensors. Tensors without a gradient are
/// treated as having a zero gradient.
class AdamW {
 public:
  explicit AdamW(std::vector<Tensor> params);

  void step(const OptimizerConfig& config, double lr);
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t steps() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamWState> state_;
  std::size_t steps_ = 0;
};

double global_grad_norm(std::span<const Tensor> params);

/// Scales every gradient by ceiling/norm when the global L2 norm exceeds the
/// ceiling. Returns the pre-clip norm.
double clip_grad_norm(std::span<Tensor> params, double ceiling = 1.0);

}  // namespace mvp
