#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ega/errors.hpp"

namespace ega {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {

// One value in the computation graph. Interior nodes carry a backprop closure
// that pulls this node's gradient and accumulates into its parents; leaves
// carry none. Data is written once by the producing op and treated as
// immutable afterwards (optimizer updates happen between forward passes).
struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // empty until first accumulation
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backprop;
    const char* op = "leaf";

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

} // namespace detail

class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        node_->shape = std::move(shape);
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> v(shape_numel(shape), 0.0);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> v(shape_numel(shape), value);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor(Shape{1}, {value}, requires_grad);
    }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::size_t ndim() const { return node_->shape.size(); }

    std::size_t rows() const {
        require_2d("rows");
        return node_->shape[0];
    }
    std::size_t cols() const {
        require_2d("cols");
        return node_->shape[1];
    }

    bool is_scalar() const { return numel() == 1; }

    double value() const {
        if (!is_scalar()) throw ShapeError("value: tensor " + shape_str(shape()) + " is not scalar");
        return node_->data[0];
    }

    double at(std::size_t i) const { return node_->data.at(i); }
    double operator()(std::size_t i, std::size_t j) const {
        require_2d("operator()");
        return node_->data[i * node_->shape[1] + j];
    }

    const std::vector<double>& values() const { return node_->data; }

    /// Direct write access for leaves (initialization, optimizer updates,
    /// data loading). Never call on an op output inside a live graph.
    std::vector<double>& mutable_values() { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty())
            throw ValueError("grad: no gradient populated for this tensor");
        return node_->grad;
    }
    /// Allocates (or re-zeros) the gradient buffer.
    void zero_grad() {
        node_->grad.assign(node_->data.size(), 0.0);
    }
    /// Drops the gradient buffer entirely.
    void clear_grad() { node_->grad.clear(); }

    /// Value copy cut loose from the graph; gradients never flow through it.
    Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

    void require_2d(const char* what) const {
        if (node_->shape.size() != 2)
            throw ShapeError(std::string(what) + ": tensor " + shape_str(shape()) + " is not 2-D");
    }

    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                                 const std::vector<Tensor>& inputs,
                                 std::function<void(const detail::Node&)> backprop);
};

// The replay order for reverse-mode differentiation: every operation node
// reachable from the output, output first, parents always after children.
struct ComputationRecord {
    std::vector<std::shared_ptr<detail::Node>> reverse_order;
};

inline ComputationRecord record_from(const Tensor& output) {
    ComputationRecord rec;
    std::unordered_set<const detail::Node*> visited;
    // iterative post-order over parents
    std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited.insert(output.node().get());
    std::vector<std::shared_ptr<detail::Node>> post;
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            auto parent = node->parents[next_parent++];
            if (visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
        } else {
            post.push_back(node);
            stack.pop_back();
        }
    }
    rec.reverse_order.assign(post.rbegin(), post.rend());
    return rec;
}

/// Reverse-mode gradient computation from a scalar output. Gradients
/// accumulate additively into every gradient-requiring leaf reachable from
/// `output`; each operation's backprop runs exactly once.
inline void backward(const Tensor& output) {
    if (!output.is_scalar())
        throw ValueError("backward: output " + shape_str(output.shape()) + " is not scalar");
    if (!output.requires_grad())
        throw ValueError("backward: output is detached from all gradient-requiring inputs");
    ComputationRecord rec = record_from(output);
    auto& out = *output.node();
    out.ensure_grad();
    out.grad[0] += 1.0;
    for (const auto& node : rec.reverse_order) {
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
    // Leaves whose every contribution is a structural zero (e.g. through the
    // norm's subgradient at 0) still end up with a populated buffer.
    for (const auto& node : rec.reverse_order)
        if (node->requires_grad) node->ensure_grad();
}

/// Wires up an op-output node: finiteness check, gradient bookkeeping.
/// The backprop closure is attached only when some input requires gradients.
inline Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                             const std::vector<Tensor>& inputs,
                             std::function<void(const detail::Node&)> backprop) {
    for (double v : data) {
        if (!std::isfinite(v))
            throw NumericError(std::string(op) + ": non-finite value in output");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad();
    if (rg) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

} // namespace ega
