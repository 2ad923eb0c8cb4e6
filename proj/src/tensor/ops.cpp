#include "mvp/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "mvp/errors.hpp"
#include "mvp/tensor/kernels.hpp"

namespace mvp {

namespace testing {
namespace {
std::string g_fault_op;
double g_fault_factor = 1.0;
}  // namespace

void set_adjoint_fault(std::string op_name, double factor) {
  g_fault_op = std::move(op_name);
  g_fault_factor = factor;
}

const std::string& adjoint_fault() { return g_fault_op; }
}  // namespace testing

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Backward = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> value, const char* op, std::vector<NodePtr> parents,
                   Backward backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  detail::check_finite(*node);
  const bool rg = !NoGradGuard::active() && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (rg) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    if (!testing::g_fault_op.empty() && testing::g_fault_op == op) {
      const double factor = testing::g_fault_factor;
      node->backward = [fn = std::move(backward), factor](Node& self) {
        for (auto& g : self.grad) g *= factor;
        fn(self);
      };
    } else {
      node->backward = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

// Accumulation target for a parent, or nullptr when it takes no gradient.
double* grad_of(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.ensure_grad().data();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::matmul(a.data(), b.data(), out, m, k, n);
  return make_result({m, n}, std::move(out), "matmul", {a.node(), b.node()}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    std::vector<double> tmp;
    if (double* ga = grad_of(self, 0)) {
      tmp.resize(m * k);
      kernels::matmul_nt(g, bv, tmp, m, n, k);  // g · bᵀ
      for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
    }
    if (double* gb = grad_of(self, 1)) {
      tmp.resize(k * n);
      kernels::matmul_tn(av, g, tmp, k, m, n);  // aᵀ · g
      for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "ᵀ");
  }
  std::vector<double> out(m * n);
  kernels::matmul_nt(a.data(), b.data(), out, m, k, n);
  return make_result({m, n}, std::move(out), "matmul_nt", {a.node(), b.node()}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    std::vector<double> tmp;
    if (double* ga = grad_of(self, 0)) {
      tmp.resize(m * k);
      kernels::matmul(g, bv, tmp, m, n, k);  // g · b
      for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
    }
    if (double* gb = grad_of(self, 1)) {
      tmp.resize(n * k);
      kernels::matmul_tn(g, av, tmp, n, m, k);  // gᵀ · a
      for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto v = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return make_result({n, m}, std::move(out), "transpose", {a.node()}, [m, n](Node& self) {
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* gp = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](Node& self) {
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return make_result(a.shape(), std::move(out), "scale", {a.node()}, [s](Node& self) {
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * s;
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row");
  const auto m = x.rows(), n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not fit rows of " + shape_str(x.shape()));
  }
  std::vector<double> out(m * n);
  const auto xv = x.data(), bv = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return make_result({m, n}, std::move(out), "add_row", {x.node(), bias.node()}, [m, n](Node& self) {
    if (double* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_matrix(x, "scale_rows");
  const auto m = x.rows(), n = x.cols();
  if (s.numel() != m) {
    throw DimensionError("scale_rows: scales " + shape_str(s.shape()) + " do not fit " + shape_str(x.shape()));
  }
  std::vector<double> out(m * n);
  const auto xv = x.data(), sv = s.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[i];
  return make_result({m, n}, std::move(out), "scale_rows", {x.node(), s.node()}, [m, n](Node& self) {
    const auto& xv = self.parents[0]->value;
    const auto& sv = self.parents[1]->value;
    if (double* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[i * n + j] * sv[i];
    }
    if (double* gs = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * xv[i * n + j];
        gs[i] += acc;
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  if (NoGradGuard::active() || !x.requires_grad()) {
    kernels::gelu(x.data(), out);
    return make_result(x.shape(), std::move(out), "gelu", {x.node()}, nullptr);
  }
  std::vector<double> t(x.numel());
  kernels::gelu(x.data(), out, t);
  return make_result(x.shape(), std::move(out), "gelu", {x.node()}, [t = std::move(t)](Node& self) {
    if (double* gx = grad_of(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * kernels::gelu_derivative(xv[i], t[i]);
    }
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const auto n = x.cols();
  const auto rows = x.numel() / n;
  std::vector<double> out(x.numel());
  kernels::softmax_rows(x.data(), out, rows, n);
  return make_result(x.shape(), std::move(out), "softmax", {x.node()}, [rows, n](Node& self) {
    if (double* gx = grad_of(self, 0)) {
      const auto& y = self.value;
      for (std::size_t r = 0; r < rows; ++r) {
        const auto off = r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += self.grad[off + j] * y[off + j];
        for (std::size_t j = 0; j < n; ++j) gx[off + j] += y[off + j] * (self.grad[off + j] - dot);
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, "sum", {x.node()}, [](Node& self) {
    if (double* gx = grad_of(self, 0)) {
      const auto n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_result({1}, {total * inv}, "mean", {x.node()}, [inv](Node& self) {
    if (double* gx = grad_of(self, 0)) {
      const auto n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0] * inv;
    }
  });
}

Tensor l2_norm(const Tensor& x) {
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  return make_result({1}, {norm}, "l2_norm", {x.node()}, [norm](Node& self) {
    if (norm == 0.0) return;
    if (double* gx = grad_of(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[0] * xv[i] / norm;
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mse");
  const auto av = a.data(), bv = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    total += d * d;
  }
  const double inv = 1.0 / static_cast<double>(av.size());
  return make_result({1}, {total * inv}, "mse", {a.node(), b.node()}, [inv](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const double g = self.grad[0] * 2.0 * inv;
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * (av[i] - bv[i]);
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * (av[i] - bv[i]);
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const auto n = parts.front().cols();
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    offsets.push_back(rows * n);
    rows += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({rows, n}, std::move(out), "concat_rows", std::move(parents),
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         if (double* gp = grad_of(self, p)) {
                           const auto count = self.parents[p]->value.size();
                           for (std::size_t i = 0; i < count; ++i) gp[i] += self.grad[offsets[p] + i];
                         }
                       }
                     });
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  }
  const auto n = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return make_result({count, n}, std::move(out), "slice_rows", {x.node()}, [begin, n](Node& self) {
    if (double* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * n + i] += self.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const auto n = x.cols();
  std::vector<double> out(rows.size() * n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw DimensionError("gather_rows: row index out of range for " + shape_str(x.shape()));
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), n}, std::move(out), "gather_rows", {x.node()},
                     [idx = std::move(idx), n](Node& self) {
                       if (double* gx = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < n; ++j) gx[idx[i] * n + j] += self.grad[i * n + j];
                       }
                     });
}

Tensor index_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> rows) {
  require_matrix(base, "index_add_rows");
  require_matrix(src, "index_add_rows");
  const auto n = base.cols();
  if (src.cols() != n || src.rows() != rows.size()) {
    throw DimensionError("index_add_rows: source " + shape_str(src.shape()) + " does not fit " +
                         std::to_string(rows.size()) + " rows of " + shape_str(base.shape()));
  }
  std::vector<double> out(base.data().begin(), base.data().end());
  const auto sv = src.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= base.rows()) throw DimensionError("index_add_rows: row index out of range");
    for (std::size_t j = 0; j < n; ++j) out[rows[i] * n + j] += sv[i * n + j];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(base.shape(), std::move(out), "index_add_rows", {base.node(), src.node()},
                     [idx = std::move(idx), n](Node& self) {
                       if (double* gb = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
                       }
                       if (double* gs = grad_of(self, 1)) {
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += self.grad[idx[i] * n + j];
                       }
                     });
}

Tensor gather_elements(const Tensor& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  require_matrix(x, "gather_elements");
  if (rows.size() != cols.size() || rows.empty()) {
    throw DimensionError("gather_elements: index lists must be non-empty and of equal length");
  }
  const auto n = x.cols();
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows() || cols[i] >= n) throw DimensionError("gather_elements: index out of range");
    flat[i] = rows[i] * n + cols[i];
    out[i] = x.data()[flat[i]];
  }
  return make_result({rows.size(), 1}, std::move(out), "gather_elements", {x.node()},
                     [flat = std::move(flat)](Node& self) {
                       if (double* gx = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += self.grad[i];
                       }
                     });
}

}  // namespace mvp
