#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ega/tensor.hpp"

// Differentiable operation set: dense matrix arithmetic, the row reductions
// used by correlation graphs, and the scalar reductions used by the losses.
// Every op validates shapes, checks its output for NaN/Inf, and registers a
// reverse rule when any input requires gradients. No broadcasting beyond the
// row-bias and row-reduction forms below.

namespace ega {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_2d(const char* op, const Tensor& t) {
    if (t.ndim() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

// C(m x n) += A(m x k) * B(k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
        }
}

// C(m x k) += A(m x n) * B(k x n)^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += a[i * n + p] * b[j * n + p];
            c[i * k + j] += acc;
        }
}

// C(k x n) += A(m x k)^T * B(m x n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t p = 0; p < m; ++p)
        for (std::size_t i = 0; i < k; ++i) {
            const double api = a[p * k + i];
            if (api == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += api * b[p * n + j];
        }
}

inline void accumulate(const std::shared_ptr<Node>& parent, const std::vector<double>& delta) {
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) parent->grad[i] += delta[i];
}

/// Stabilized log-softmax of one row. Shared between the tensor op and the
/// constant (teacher-side) computations so identical logits cancel exactly.
inline void log_softmax_row(const double* row, std::size_t n, double* out) {
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lz = std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[j] = row[j] - mx - lz;
}

} // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_2d("matmul", a);
    detail::require_2d("matmul", b);
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto an = a.node();
    auto bn = b.node();
    return make_op_result("matmul", {m, n}, std::move(out), {a, b},
                          [an, bn, m, k, n](const detail::Node& self) {
                              if (an->requires_grad) {
                                  an->ensure_grad();
                                  detail::gemm_nt(self.grad.data(), bn->data.data(),
                                                  an->grad.data(), m, n, k);
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  detail::gemm_tn(an->data.data(), self.grad.data(),
                                                  bn->grad.data(), m, k, n);
                              }
                          });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_2d("transpose", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
    auto an = a.node();
    return make_op_result("transpose", {n, m}, std::move(out), {a},
                          [an, m, n](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < n; ++j)
                                      an->grad[i * n + j] += self.grad[j * m + i];
                          });
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    auto an = a.node();
    return make_op_result("reshape", std::move(new_shape), a.values(), {a},
                          [an](const detail::Node& self) { detail::accumulate(an, self.grad); });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result("add", a.shape(), std::move(out), {a, b},
                          [an, bn](const detail::Node& self) {
                              detail::accumulate(an, self.grad);
                              detail::accumulate(bn, self.grad);
                          });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result("sub", a.shape(), std::move(out), {a, b},
                          [an, bn](const detail::Node& self) {
                              detail::accumulate(an, self.grad);
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      bn->grad[i] -= self.grad[i];
                              }
                          });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result("mul", a.shape(), std::move(out), {a, b},
                          [an, bn](const detail::Node& self) {
                              if (an->requires_grad) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      an->grad[i] += self.grad[i] * bn->data[i];
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      bn->grad[i] += self.grad[i] * an->data[i];
                              }
                          });
}

inline Tensor divide(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("divide", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result("divide", a.shape(), std::move(out), {a, b},
                          [an, bn](const detail::Node& self) {
                              if (an->requires_grad) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      an->grad[i] += self.grad[i] / bn->data[i];
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      bn->grad[i] -= self.grad[i] * an->data[i] /
                                                     (bn->data[i] * bn->data[i]);
                              }
                          });
}

/// out[i,j] = a[i,j] + bias[j]; the broadcast bias add of a linear layer.
inline Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
    detail::require_2d("add_row_bias", a);
    if (bias.ndim() != 1 || bias.numel() != a.cols())
        throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.values()[i * n + j] + bias.at(j);
    auto an = a.node();
    auto bn = bias.node();
    return make_op_result("add_row_bias", a.shape(), std::move(out), {a, bias},
                          [an, bn, m, n](const detail::Node& self) {
                              detail::accumulate(an, self.grad);
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j)
                                          bn->grad[j] += self.grad[i * n + j];
                              }
                          });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    auto an = a.node();
    return make_op_result("relu", a.shape(), std::move(out), {a},
                          [an](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
                          });
}

/// (B x D) -> (B x 1) mean of each row.
inline Tensor row_mean(const Tensor& a) {
    detail::require_2d("row_mean", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += a.values()[i * n + j];
        out[i] = acc / static_cast<double>(n);
    }
    auto an = a.node();
    return make_op_result("row_mean", {m, 1}, std::move(out), {a},
                          [an, m, n](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < m; ++i) {
                                  const double g = self.grad[i] / static_cast<double>(n);
                                  for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g;
                              }
                          });
}

/// (B x D) -> (B x 1) sum of each row.
inline Tensor row_sum(const Tensor& a) {
    detail::require_2d("row_sum", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += a.values()[i * n + j];
        out[i] = acc;
    }
    auto an = a.node();
    return make_op_result("row_sum", {m, 1}, std::move(out), {a},
                          [an, m, n](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < n; ++j)
                                      an->grad[i * n + j] += self.grad[i];
                          });
}

/// Subtracts each row's mean from the row: y = x - rowmean(x).
inline Tensor center_rows(const Tensor& a) {
    detail::require_2d("center_rows", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += a.values()[i * n + j];
        mean /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.values()[i * n + j] - mean;
    }
    auto an = a.node();
    return make_op_result("center_rows", a.shape(), std::move(out), {a},
                          [an, m, n](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < m; ++i) {
                                  double gmean = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) gmean += self.grad[i * n + j];
                                  gmean /= static_cast<double>(n);
                                  for (std::size_t j = 0; j < n; ++j)
                                      an->grad[i * n + j] += self.grad[i * n + j] - gmean;
                              }
                          });
}

/// Element-wise square root. The derivative at exactly 0 is taken as 0 (the
/// same subgradient convention frobenius_norm uses at the zero matrix), so
/// zero-variance rows upstream cannot emit NaN gradients.
inline Tensor sqrt_elem(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.values()[i]);
    auto an = a.node();
    return make_op_result("sqrt_elem", a.shape(), std::move(out), {a},
                          [an](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  if (self.data[i] > 0.0)
                                      an->grad[i] += self.grad[i] / (2.0 * self.data[i]);
                          });
}

/// Row-wise log-softmax with max-subtraction stabilization.
inline Tensor log_softmax_rows(const Tensor& a) {
    detail::require_2d("log_softmax_rows", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        detail::log_softmax_row(a.values().data() + i * n, n, out.data() + i * n);
    auto an = a.node();
    return make_op_result("log_softmax_rows", a.shape(), std::move(out), {a},
                          [an, m, n](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < m; ++i) {
                                  double gsum = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) gsum += self.grad[i * n + j];
                                  for (std::size_t j = 0; j < n; ++j)
                                      an->grad[i * n + j] += self.grad[i * n + j] -
                                                             std::exp(self.data[i * n + j]) * gsum;
                              }
                          });
}

/// sqrt(sum of squared entries) -> scalar. Gradient at the zero matrix is
/// defined as zero (subgradient choice at the kink).
inline Tensor frobenius_norm(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v * v;
    const double norm = std::sqrt(acc);
    auto an = a.node();
    return make_op_result("frobenius_norm", {1}, {norm}, {a},
                          [an, norm](const detail::Node& self) {
                              if (!an->requires_grad || norm == 0.0) return;
                              an->ensure_grad();
                              const double g = self.grad[0] / norm;
                              for (std::size_t i = 0; i < an->data.size(); ++i)
                                  an->grad[i] += g * an->data[i];
                          });
}

/// y = alpha * x + beta, element-wise.
inline Tensor scale_add(const Tensor& a, double alpha, double beta) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * a.values()[i] + beta;
    auto an = a.node();
    return make_op_result("scale_add", a.shape(), std::move(out), {a},
                          [an, alpha](const detail::Node& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  an->grad[i] += alpha * self.grad[i];
                          });
}

/// Sum of all entries -> scalar.
inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    auto an = a.node();
    return make_op_result("sum", {1}, {acc}, {a}, [an](const detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < an->data.size(); ++i) an->grad[i] += self.grad[0];
    });
}

} // namespace ega
