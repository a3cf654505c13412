#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ega/ops.hpp"
#include "ega/tensor.hpp"

// Correlation-graph construction and the graph-matching losses used for
// distillation. A batch of B node embeddings (one D-vector per instance)
// induces a complete graph whose edge weights are Pearson correlations
// between embedding pairs; distillation aligns the student's graph with the
// teacher's and ties corresponding nodes together across the two networks.

namespace ega {

/// Denominator guard: keeps correlations of zero-variance (collapsed) rows
/// finite. Such rows correlate ~0 with everything, including themselves.
inline constexpr double kCorrelationEps = 1e-8;

enum class GraphLossNorm {
    frobenius,    // ||.||_F, unsquared, no size normalization
    mean_squared, // sum of squares / entry count
};

namespace detail {

inline void require_embedding_batch(const char* op, const Tensor& x) {
    require_2d(op, x);
    if (x.rows() < 2)
        throw ShapeError(std::string(op) + ": a correlation graph needs at least 2 rows, got " +
                         shape_str(x.shape()));
    if (x.cols() < 2)
        throw ShapeError(std::string(op) + ": embedding dimension must be >= 2, got " +
                         shape_str(x.shape()));
    for (double v : x.values())
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

/// Centered rows, their norms (B x 1), and the cross-correlation matrix
/// num / (norm_a * norm_b + eps) shared by edge_matrix and node_matrix.
inline Tensor correlation_matrix(const Tensor& a, const Tensor& b) {
    Tensor ca = center_rows(a);
    Tensor cb = a.same_storage(b) ? ca : center_rows(b);
    Tensor na = sqrt_elem(row_sum(mul(ca, ca)));
    Tensor nb = a.same_storage(b) ? na : sqrt_elem(row_sum(mul(cb, cb)));
    Tensor num = matmul(ca, transpose(cb));
    Tensor den = scale_add(matmul(na, transpose(nb)), 1.0, kCorrelationEps);
    return divide(num, den);
}

} // namespace detail

/// Pearson correlation of two D-vectors (D >= 2), in the centered
/// sum-of-products form with the epsilon guard in the denominator:
/// r = sum(cx*cy) / (||cx|| * ||cy|| + eps). Differentiable in both inputs.
inline Tensor pearson(const Tensor& x, const Tensor& y) {
    if (x.numel() != y.numel())
        throw ShapeError("pearson: length mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(y.shape()));
    if (x.numel() < 2) throw ShapeError("pearson: vectors must have dimension >= 2");
    for (double v : x.values())
        if (!std::isfinite(v)) throw NumericError("pearson: non-finite input");
    for (double v : y.values())
        if (!std::isfinite(v)) throw NumericError("pearson: non-finite input");
    const std::size_t d = x.numel();
    Tensor xr = x.ndim() == 2 ? x : reshape(x, {1, d});
    Tensor yr = y.ndim() == 2 ? y : reshape(y, {1, d});
    if (xr.rows() != 1 || yr.rows() != 1)
        throw ShapeError("pearson: expected vectors, got " + shape_str(x.shape()) + " and " +
                         shape_str(y.shape()));
    return reshape(detail::correlation_matrix(xr, yr), {1});
}

/// Edge matrix E(X, X): pairwise Pearson correlations of the rows of X.
/// Symmetric, entries in [-1, 1], diagonal ~1 for rows with non-zero
/// variance. Vectorized; equals the pairwise pearson() values exactly.
inline Tensor edge_matrix(const Tensor& x) {
    detail::require_embedding_batch("edge_matrix", x);
    return detail::correlation_matrix(x, x);
}

/// Node matrix N_st = E(X_t, X_s): cross-network correlations, entry (i, j)
/// correlating teacher row i with student row j. Not symmetric in general.
inline Tensor node_matrix(const Tensor& x_teacher, const Tensor& x_student) {
    detail::require_embedding_batch("node_matrix", x_teacher);
    detail::require_embedding_batch("node_matrix", x_student);
    if (x_teacher.shape() != x_student.shape())
        throw ShapeError("node_matrix: batch shapes disagree, " + shape_str(x_teacher.shape()) +
                         " vs " + shape_str(x_student.shape()));
    return detail::correlation_matrix(x_teacher, x_student);
}

/// Indices of rows whose centered sum of squares is <= tol. Correlations
/// involving them are epsilon-dominated; the unit-diagonal property is
/// waived for them.
inline std::vector<std::size_t> degenerate_rows(const Tensor& x, double tol = 1e-12) {
    detail::require_embedding_batch("degenerate_rows", x);
    std::vector<std::size_t> out;
    const std::size_t b = x.rows(), d = x.cols();
    for (std::size_t i = 0; i < b; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x.values()[i * d + j];
        mean /= static_cast<double>(d);
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x.values()[i * d + j] - mean;
            ss += c * c;
        }
        if (ss <= tol) out.push_back(i);
    }
    return out;
}

namespace detail {

inline Tensor graph_distance(const Tensor& diff, GraphLossNorm norm) {
    if (norm == GraphLossNorm::frobenius) return frobenius_norm(diff);
    return scale_add(sum(mul(diff, diff)), 1.0 / static_cast<double>(diff.numel()), 0.0);
}

} // namespace detail

/// Edge matching loss ||E_t - E_s||. The teacher matrix is a constant
/// target: gradients flow into the student side only.
inline Tensor edge_loss(const Tensor& e_teacher, const Tensor& e_student,
                        GraphLossNorm norm = GraphLossNorm::frobenius) {
    detail::require_same_shape("edge_loss", e_teacher, e_student);
    return detail::graph_distance(sub(e_student, e_teacher.detach()), norm);
}

/// Node matching loss ||N_st - I||: pulls same-instance cross-network
/// correlation toward 1 and different-instance correlation toward 0.
inline Tensor node_loss(const Tensor& node_mat, GraphLossNorm norm = GraphLossNorm::frobenius) {
    detail::require_2d("node_loss", node_mat);
    if (node_mat.rows() != node_mat.cols())
        throw ShapeError("node_loss: matrix " + shape_str(node_mat.shape()) + " is not square");
    return detail::graph_distance(sub(node_mat, Tensor::identity(node_mat.rows())),
                                  norm);
}

/// Combined graph alignment loss:
///   L = ||N_st - I|| + lambda * ||E_t - E_s||.
/// The teacher batch enters as a constant; its gradients are exactly zero.
inline Tensor ega_loss(const Tensor& x_teacher, const Tensor& x_student, double lambda,
                       GraphLossNorm norm = GraphLossNorm::frobenius) {
    if (!(lambda >= 0.0)) throw ValueError("ega_loss: lambda must be >= 0");
    Tensor xt = x_teacher.detach();
    Tensor l_node = node_loss(node_matrix(xt, x_student), norm);
    Tensor l_edge = edge_loss(edge_matrix(xt), edge_matrix(x_student), norm);
    return add(l_node, scale_add(l_edge, lambda, 0.0));
}

/// Mean negative log-likelihood of the labeled class, stabilized by
/// max-subtraction inside log_softmax_rows.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    detail::require_2d("cross_entropy", logits);
    const std::size_t b = logits.rows(), c = logits.cols();
    if (labels.size() != b)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
    Tensor mask = Tensor::zeros({b, c});
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw ValueError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                             std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
        mask.mutable_values()[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    Tensor picked = sum(mul(log_softmax_rows(logits), mask));
    return scale_add(picked, -1.0 / static_cast<double>(b), 0.0);
}

/// Soft-target distillation loss:
///   T^2 * mean_b KL( softmax(teacher/T) || softmax(student/T) ).
/// The teacher distribution is a constant target.
inline Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      double temperature) {
    detail::require_same_shape("kd_loss", student_logits, teacher_logits);
    detail::require_2d("kd_loss", student_logits);
    if (!(temperature > 0.0)) throw ValueError("kd_loss: temperature must be > 0");
    const std::size_t b = student_logits.rows(), c = student_logits.cols();
    const double t = temperature;

    // Constant teacher side: probabilities and log-probabilities, computed
    // with the same stabilized routine as the student's log_softmax so that
    // identical logits cancel exactly.
    std::vector<double> p(b * c), logp(b * c), row(c);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < c; ++j) row[j] = teacher_logits.values()[i * c + j] / t;
        detail::log_softmax_row(row.data(), c, logp.data() + i * c);
        for (std::size_t j = 0; j < c; ++j) p[i * c + j] = std::exp(logp[i * c + j]);
    }

    // KL as sum of p * (log p - log q): the element-wise difference keeps
    // the two big log-partition sums from cancelling catastrophically.
    Tensor log_q = log_softmax_rows(scale_add(student_logits, 1.0 / t, 0.0));
    Tensor per_elem = mul(Tensor({b, c}, std::move(p)), sub(Tensor({b, c}, std::move(logp)), log_q));
    return scale_add(sum(per_elem), t * t / static_cast<double>(b), 0.0);
}

/// Overall objective L = L_ce + lambda_ega * L_ega (+ lambda_kd * L_kd).
inline Tensor total_loss(const Tensor& ce, const Tensor& ega, double lambda_ega,
                         const std::optional<Tensor>& kd = std::nullopt, double lambda_kd = 0.0) {
    if (!(lambda_ega >= 0.0) || !(lambda_kd >= 0.0))
        throw ValueError("total_loss: loss weights must be >= 0");
    Tensor out = add(ce, scale_add(ega, lambda_ega, 0.0));
    if (kd) out = add(out, scale_add(*kd, lambda_kd, 0.0));
    return out;
}

} // namespace ega
