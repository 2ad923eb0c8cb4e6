#include "mvp/tensor/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mvp::kernels {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// One output row per call. Shared by both paths so their arithmetic is identical.
inline void matmul_row(const double* a_row, const double* b, double* c_row, std::size_t k, std::size_t n) {
  std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c_row, std::size_t i, std::size_t m,
                          std::size_t k, std::size_t n) {
  std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

// Four output columns at a time for instruction-level parallelism. Each
// column still accumulates over p in order, so results match the plain loop.
inline void matmul_nt_row(const double* a_row, const double* b, double* c_row, std::size_t k, std::size_t n) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const double* b0 = b + j * k;
    const double* b1 = b0 + k;
    const double* b2 = b1 + k;
    const double* b3 = b2 + k;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a_row[p];
      s0 += av * b0[p];
      s1 += av * b1[p];
      s2 += av * b2[p];
      s3 += av * b3[p];
    }
    c_row[j] = s0;
    c_row[j + 1] = s1;
    c_row[j + 2] = s2;
    c_row[j + 3] = s3;
  }
  for (; j < n; ++j) {
    const double* b_row = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
    c_row[j] = acc;
  }
}

inline void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

}  // namespace

double gelu_scalar(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_tanh(double x) { return std::tanh(kGeluC * (x + kGeluA * x * x * x)); }

double gelu_derivative(double x) { return gelu_derivative(x, gelu_tanh(x)); }

double gelu_derivative(double x, double t) {
  const double d_inner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
}

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a.data(), b.data(), c.data() + i * n, i, m, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.data() + r * n, y.data() + r * n, n);
}

void gelu(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
}

void gelu(std::span<const double> x, std::span<double> y, std::span<double> t) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    t[i] = gelu_tanh(x[i]);
    y[i] = 0.5 * x[i] * (1.0 + t[i]);
  }
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_tn_row(a.data(), b.data(), c.data() + r * n, r, m, k, n);
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_nt_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n) {
  const auto count = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < count; ++r) {
    const auto off = static_cast<std::size_t>(r) * n;
    softmax_row(x.data() + off, y.data() + off, n);
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  const auto count = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu(std::span<const double> x, std::span<double> y, std::span<double> t) {
  const auto count = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    t[i] = gelu_tanh(x[i]);
    y[i] = 0.5 * x[i] * (1.0 + t[i]);
  }
}

}  // namespace parallel

namespace {
inline bool go_parallel(std::size_t work) { return openmp_enabled() && work >= kParallelThreshold; }
}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  if (go_parallel(m * k * n)) parallel::matmul(a, b, c, m, k, n);
  else serial::matmul(a, b, c, m, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (go_parallel(m * k * n)) parallel::matmul_tn(a, b, c, m, k, n);
  else serial::matmul_tn(a, b, c, m, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (go_parallel(m * k * n)) parallel::matmul_nt(a, b, c, m, k, n);
  else serial::matmul_nt(a, b, c, m, k, n);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n) {
  if (go_parallel(rows * n * 8)) parallel::softmax_rows(x, y, rows, n);
  else serial::softmax_rows(x, y, rows, n);
}

void gelu(std::span<const double> x, std::span<double> y) {
  if (go_parallel(x.size() * 16)) parallel::gelu(x, y);
  else serial::gelu(x, y);
}

void gelu(std::span<const double> x, std::span<double> y, std::span<double> t) {
  if (go_parallel(x.size() * 16)) parallel::gelu(x, y, t);
  else serial::gelu(x, y, t);
}

}  // namespace mvp::kernels
