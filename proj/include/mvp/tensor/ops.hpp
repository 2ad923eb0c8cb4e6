#pragma once

// Differentiable ops. Each op checks shapes, computes its value eagerly and,
// when any input requires grad, records its adjoint on the output node.
// Matrices are rows-of-tokens; scalars are shape {1}.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mvp/tensor/tensor.hpp"

namespace mvp {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[m×n] + bias broadcast over rows; bias has n elements.
Tensor add_row(const Tensor& x, const Tensor& bias);
/// x[m×n] · s[m] row-wise; s has one element per row.
Tensor scale_rows(const Tensor& x, const Tensor& s);

/// tanh-form GELU, see kernels::gelu_scalar for the constants.
Tensor gelu(const Tensor& x);
/// Softmax over the last axis with max subtraction.
Tensor softmax_lastdim(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Euclidean norm of all elements; the adjoint at 0 is taken as 0.
Tensor l2_norm(const Tensor& x);
/// mean((a - b)²)
Tensor mse(const Tensor& a, const Tensor& b);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
/// Rows of x at `rows`, in that order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// base with src[i] added to row rows[i]; rows may repeat.
Tensor index_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> rows);
/// Column vector [k×1] of x(rows[i], cols[i]).
Tensor gather_elements(const Tensor& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols);

namespace testing {
/// Fault-injection hook: scales the adjoint of every op with this name by
/// `factor`. Empty name disables. Used to prove the gradient checker bites.
void set_adjoint_fault(std::string op_name, double factor = 1.5);
const std::string& adjoint_fault();
}  // namespace testing

}  // namespace mvp
