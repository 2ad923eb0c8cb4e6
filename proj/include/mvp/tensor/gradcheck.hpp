#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "mvp/tensor/tensor.hpp"

namespace mvp {

enum class FdStencil {
  central2,  // (f(θ+h) − f(θ−h)) / 2h, error O(h²)
  central4,  // (8(f(θ+h) − f(θ−h)) − (f(θ+2h) − f(θ−2h))) / 12h, error O(h⁴)
};

/// Central-difference estimate of ∂f/∂θᵢ for every coordinate.
/// θ is perturbed in place and restored before returning.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor theta, double h = 1e-5,
                        FdStencil stencil = FdStencil::central2);

struct GradComparison {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

/// Elementwise |a − n| / max(|a|, |n|, floor); the max over elements is reported.
/// The floor keeps coordinates whose true derivative is ~0 from dividing by noise.
GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6);

}  // namespace mvp
