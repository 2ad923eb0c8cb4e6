#pragma once

// Row-major dense kernels.
//
// Every kernel exists twice: `serial` is the reference used by tests, and
// `parallel` splits the outer (row) loop across OpenMP threads. Each output
// element is produced by the same inner loop in both, with the reduction index
// ascending, so the two agree bit-for-bit and results do not depend on the
// thread count. The unqualified entry points pick `parallel` above a work
// threshold.

#include <cstddef>
#include <span>

namespace mvp::kernels {

namespace serial {
// c[m×n] = a[m×k] · b[k×n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// c[m×n] = a[k×m]ᵀ · b[k×n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// c[m×n] = a[m×k] · b[n×k]ᵀ
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n);
void gelu(std::span<const double> x, std::span<double> y);
/// Also stores the inner tanh in t for the backward pass.
void gelu(std::span<const double> x, std::span<double> y, std::span<double> t);
}  // namespace serial

namespace parallel {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n);
void gelu(std::span<const double> x, std::span<double> y);
/// Also stores the inner tanh in t for the backward pass.
void gelu(std::span<const double> x, std::span<double> y, std::span<double> t);
}  // namespace parallel

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n);
void gelu(std::span<const double> x, std::span<double> y);
/// Also stores the inner tanh in t for the backward pass.
void gelu(std::span<const double> x, std::span<double> y, std::span<double> t);

/// tanh-form GELU: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
double gelu_scalar(double x);
double gelu_derivative(double x);
/// Same, given t = gelu_tanh(x).
double gelu_derivative(double x, double t);
double gelu_tanh(double x);

/// True when built with OpenMP support.
bool openmp_enabled();
/// Multiply-adds above which the dispatchers use the parallel path.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace mvp::kernels
