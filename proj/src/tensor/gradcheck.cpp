#include "mvp/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mvp/errors.hpp"

namespace mvp {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor theta, double h, FdStencil stencil) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  auto values = theta.mutable_data();
  std::vector<double> out(values.size());
  auto at = [&](std::size_t i, double saved, double offset) {
    values[i] = saved + offset;
    return f(theta);
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    if (stencil == FdStencil::central2) {
      out[i] = (at(i, saved, h) - at(i, saved, -h)) / (2.0 * h);
    } else {
      const double p1 = at(i, saved, h), m1 = at(i, saved, -h);
      const double p2 = at(i, saved, 2.0 * h), m2 = at(i, saved, -2.0 * h);
      out[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    }
    values[i] = saved;
  }
  return Tensor(theta.shape(), std::move(out));
}

GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw DimensionError("compare_gradients: length mismatch");
  GradComparison cmp;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double rel = diff / denom;
    cmp.max_abs_error = std::max(cmp.max_abs_error, diff);
    if (rel > cmp.max_rel_error) {
      cmp.max_rel_error = rel;
      cmp.worst_index = i;
    }
  }
  return cmp;
}

}  // namespace mvp
