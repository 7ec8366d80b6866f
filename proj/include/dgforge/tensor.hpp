#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// Every operation returns a fresh Tensor that remembers its inputs and a rule
// for pushing its gradient back to them. The graph is the DAG reachable from
// the tensor handed to backward(); it is rebuilt on every forward pass.
// A graph and its tensors belong to one thread at a time.

#include "dgforge/error.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dgforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    std::vector<double>& ensure_grad() {
        if (grad.empty()) {
            grad.assign(values.size(), 0.0);
        }
        return grad;
    }
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape.empty()) {
            throw DimensionError("tensor shape must have at least one axis");
        }
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (shape[i] == 0) {
                throw DimensionError("tensor axis " + std::to_string(i) + " has size 0 in shape " +
                                     shape_string(shape));
            }
        }
        if (shape_size(shape) != values.size()) {
            throw DimensionError("shape " + shape_string(shape) + " holds " +
                                 std::to_string(shape_size(shape)) + " values but " +
                                 std::to_string(values.size()) + " were given");
        }
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    /// Builds a rows x cols matrix from nested rows.
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
        if (rows.empty() || rows.front().empty()) {
            throw DimensionError("matrix literal must be non-empty");
        }
        const std::size_t cols = rows.front().size();
        std::vector<double> values;
        values.reserve(rows.size() * cols);
        for (const auto& row : rows) {
            if (row.size() != cols) {
                throw DimensionError("ragged matrix literal");
            }
            values.insert(values.end(), row.begin(), row.end());
        }
        return Tensor({rows.size(), cols}, std::move(values), requires_grad);
    }

    static Tensor row_vector(std::vector<double> values, bool requires_grad = false) {
        const auto n = values.size();
        return Tensor({1, n}, std::move(values), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }

    std::size_t rows() const {
        require_matrix("rows");
        return node_->shape[0];
    }
    std::size_t cols() const {
        require_matrix("cols");
        return node_->shape[1];
    }

    std::span<const double> values() const { return node_->values; }
    /// Direct write access for optimizers and perturbation oracles. Writing
    /// invalidates any graph that already consumed this tensor.
    std::span<double> mutable_values() { return node_->values; }

    double operator[](std::size_t i) const { return node_->values[i]; }
    double at(std::size_t r, std::size_t c) const {
        require_matrix("at");
        return node_->values[r * node_->shape[1] + c];
    }

    double item() const {
        if (size() != 1) {
            throw ContractError("item() on tensor of shape " + shape_string(shape()));
        }
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    /// Gradient payload; zeros when nothing has been accumulated yet.
    std::vector<double> grad() const {
        if (node_->grad.empty()) {
            return std::vector<double>(size(), 0.0);
        }
        return node_->grad;
    }

    void zero_grad() { node_->grad.clear(); }

    /// Same values, cut off from the graph, never requiring grad.
    Tensor detach() const { return Tensor(shape(), node_->values, false); }

    /// Fresh leaf with copied values.
    Tensor clone(bool requires_grad) const { return Tensor(shape(), node_->values, requires_grad); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    void require_matrix(const char* what) const {
        if (node_->shape.size() != 2) {
            throw DimensionError(std::string(what) + " requires a matrix, got shape " +
                                 shape_string(node_->shape));
        }
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Creates an op result. Inputs and the backward rule are only retained when
/// some input participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
#ifndef NDEBUG
    bool inputs_finite = true;
    for (const auto& in : inputs) {
        inputs_finite = inputs_finite && all_finite(in.node()->values);
    }
    assert(!inputs_finite || all_finite(node->values));
#endif
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            node->inputs.push_back(in.node());
        }
        node->backward = std::move(backward);
    }
    return Tensor::wrap(std::move(node));
}

inline void require_matrix(const Tensor& t, const char* op, const char* name) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": " + name + " must be a matrix, got " +
                             shape_string(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

/// Accepts (n) or (1,n) as a row vector and returns n.
inline std::size_t row_vector_width(const Tensor& t, const char* op, const char* name) {
    if (t.rank() == 1) {
        return t.shape()[0];
    }
    if (t.rank() == 2 && t.shape()[0] == 1) {
        return t.shape()[1];
    }
    throw DimensionError(std::string(op) + ": " + name + " must be a row vector, got " +
                         shape_string(t.shape()));
}

inline void accumulate(Node& target, std::span<const double> delta) {
    if (!target.requires_grad) {
        return;
    }
    auto& g = target.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += delta[i];
    }
}

// C (m x n) += A (m x k) * B (k x n), all row-major.
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C (m x n) += A (m x k) * B^T where B is (n x k).
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += arow[p] * brow[p];
            }
            c[i * n + j] += s;
        }
    }
}

// C (k x n) += A^T * B where A is (m x k), B is (m x n).
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) {
                continue;
            }
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Differentiation

/// Populates grads of every requires_grad leaf reachable from `output`.
///
/// Intermediate gradients are reset on entry, so calling backward twice on
/// the same graph adds the gradient to the leaves twice (leaf grads
/// accumulate until zero_grad()).
inline void backward(const Tensor& output) {
    if (output.size() != 1) {
        throw ContractError("backward requires a scalar output, got shape " +
                            shape_string(output.shape()));
    }
    if (!output.requires_grad()) {
        return;
    }
    using detail::Node;
    // Iterative post-order DFS yields a topological order (inputs first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(output.node().get(), 0);
    visited.insert(output.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* node : order) {
        if (!node->is_leaf()) {
            node->grad.assign(node->values.size(), 0.0);
        }
    }
    output.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) {
            (*it)->backward(**it);
        }
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

/// out = x W + b for x (n x d_in), W (d_in x d_out), b a row vector of d_out.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::require_matrix(x, "affine", "x");
    detail::require_matrix(w, "affine", "W");
    const std::size_t n = x.rows();
    const std::size_t din = x.cols();
    const std::size_t dout = w.cols();
    if (w.rows() != din) {
        throw DimensionError("affine: x has " + std::to_string(din) + " columns (axis 1) but W has " +
                             std::to_string(w.rows()) + " rows (axis 0)");
    }
    const std::size_t bw = detail::row_vector_width(b, "affine", "b");
    if (bw != dout) {
        throw DimensionError("affine: W has " + std::to_string(dout) +
                             " columns (axis 1) but b has " + std::to_string(bw) + " entries");
    }
    std::vector<double> out(n * dout);
    const auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * dout));
    }
    detail::gemm_nn(n, din, dout, x.values().data(), w.values().data(), out.data());
    return detail::make_result({n, dout}, std::move(out), {x, w, b}, [n, din, dout](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const double* g = self.grad.data();
        if (xn.requires_grad) {
            auto& gx = xn.ensure_grad();
            detail::gemm_nt(n, dout, din, g, wn.values.data(), gx.data());
        }
        if (wn.requires_grad) {
            auto& gw = wn.ensure_grad();
            detail::gemm_tn(n, din, dout, xn.values.data(), g, gw.data());
        }
        if (bn.requires_grad) {
            auto& gb = bn.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dout; ++j) {
                    gb[j] += g[i * dout + j];
                }
            }
        }
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul", "A");
    detail::require_matrix(b, "matmul", "B");
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: A axis 1 has " + std::to_string(k) + " but B axis 0 has " +
                             std::to_string(b.rows()));
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        if (an.requires_grad) {
            detail::gemm_nt(m, n, k, self.grad.data(), bn.values.data(), an.ensure_grad().data());
        }
        if (bn.requires_grad) {
            detail::gemm_tn(m, k, n, an.values.data(), self.grad.data(), bn.ensure_grad().data());
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose", "A");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    std::vector<double> out(m * n);
    const auto v = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = v[i * n + j];
        }
    }
    return detail::make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += self.grad[j * m + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Element-wise

namespace detail {

template <class Forward, class Local>
Tensor unary(const Tensor& a, Forward f, Local dfdx) {
    std::vector<double> out(a.size());
    const auto v = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(v[i]);
    }
    return make_result(a.shape(), std::move(out), {a}, [dfdx](Node& self) {
        auto& in = *self.inputs[0];
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * dfdx(in.values[i], self.values[i]);
        }
    });
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        detail::accumulate(*self.inputs[1], self.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        auto& bn = *self.inputs[1];
        if (bn.requires_grad) {
            auto& g = bn.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

/// Sum of equally shaped tensors.
inline Tensor add_all(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("add_all: nothing to add");
    }
    std::vector<double> out(parts.front().values().begin(), parts.front().values().end());
    for (std::size_t k = 1; k < parts.size(); ++k) {
        detail::require_same_shape(parts.front(), parts[k], "add_all");
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += parts[k][i];
        }
    }
    return detail::make_result(parts.front().shape(), std::move(out), parts, [](detail::Node& self) {
        for (auto& in : self.inputs) {
            detail::accumulate(*in, self.grad);
        }
    });
}

/// Element-wise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        if (an.requires_grad) {
            auto& g = an.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * bn.values[i];
            }
        }
        if (bn.requires_grad) {
            auto& g = bn.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * an.values[i];
            }
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Square root; the derivative at 0 is taken as 0 rather than infinity.
inline Tensor sqrt(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// max(0, x); the subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return sigmoid_value(x); }, [](double, double y) { return y * (1.0 - y); });
}

/// Clamps values below `floor` up to it; gradient passes only where x > floor.
inline Tensor clamp_min(const Tensor& a, double floor) {
    return detail::unary(
        a, [floor](double x) { return x > floor ? x : floor; },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Broadcasting and reductions

/// Adds row vector r to every row of A.
inline Tensor add_row(const Tensor& a, const Tensor& r) {
    detail::require_matrix(a, "add_row", "A");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    if (detail::row_vector_width(r, "add_row", "r") != n) {
        throw DimensionError("add_row: A has " + std::to_string(n) + " columns but r has " +
                             std::to_string(r.size()));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += r[j];
        }
    }
    return detail::make_result({m, n}, std::move(out), {a, r}, [m, n](detail::Node& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        auto& rn = *self.inputs[1];
        if (rn.requires_grad) {
            auto& g = rn.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g[j] += self.grad[i * n + j];
                }
            }
        }
    });
}

inline Tensor sub_row(const Tensor& a, const Tensor& r) { return add_row(a, scale(r, -1.0)); }

inline Tensor sum(const Tensor& a) {
    const double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    return detail::make_result({1}, {s}, {a}, [](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (auto& gi : g) {
            gi += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Column means as a (1 x n) row vector.
inline Tensor col_mean(const Tensor& a) {
    detail::require_matrix(a, "col_mean", "A");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j] += a[i * n + j];
        }
    }
    for (auto& v : out) {
        v /= static_cast<double>(m);
    }
    return detail::make_result({1, n}, std::move(out), {a}, [m, n](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += self.grad[j] * inv;
            }
        }
    });
}

/// Rows [begin, end) of a matrix.
inline Tensor rows(const Tensor& a, std::size_t begin, std::size_t end) {
    detail::require_matrix(a, "rows", "A");
    if (begin >= end || end > a.rows()) {
        throw DimensionError("rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for " + std::to_string(a.rows()) + " rows");
    }
    const std::size_t n = a.cols();
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                            a.values().begin() + static_cast<std::ptrdiff_t>(end * n));
    return detail::make_result({end - begin, n}, std::move(out), {a}, [begin, n](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[begin * n + i] += self.grad[i];
        }
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: nothing to concatenate");
    }
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
        if (p.cols() != n) {
            throw DimensionError("concat_rows: column count mismatch " + std::to_string(p.cols()) +
                                 " vs " + std::to_string(n));
        }
        m += p.rows();
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return detail::make_result({m, n}, std::move(out), parts, [](detail::Node& self) {
        std::size_t offset = 0;
        for (auto& in : self.inputs) {
            const std::size_t len = in->values.size();
            if (in->requires_grad) {
                auto& g = in->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) {
                    g[i] += self.grad[offset + i];
                }
            }
            offset += len;
        }
    });
}

/// Squared Euclidean distances between rows: out[i,j] = |x_i - y_j|^2.
inline Tensor pairwise_sq_dist(const Tensor& x, const Tensor& y) {
    detail::require_matrix(x, "pairwise_sq_dist", "X");
    detail::require_matrix(y, "pairwise_sq_dist", "Y");
    const std::size_t n = x.rows();
    const std::size_t m = y.rows();
    const std::size_t d = x.cols();
    if (y.cols() != d) {
        throw DimensionError("pairwise_sq_dist: X has " + std::to_string(d) +
                             " columns (axis 1) but Y has " + std::to_string(y.cols()));
    }
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x[i * d + k] - y[j * d + k];
                s += diff * diff;
            }
            out[i * m + j] = s;
        }
    }
    return detail::make_result({n, m}, std::move(out), {x, y}, [n, m, d](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& yn = *self.inputs[1];
        std::vector<double>* gx = xn.requires_grad ? &xn.ensure_grad() : nullptr;
        std::vector<double>* gy = yn.requires_grad ? &yn.ensure_grad() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double g = self.grad[i * m + j];
                if (g == 0.0) {
                    continue;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double t = 2.0 * g * (xn.values[i * d + k] - yn.values[j * d + k]);
                    if (gx) {
                        (*gx)[i * d + k] += t;
                    }
                    if (gy) {
                        (*gy)[j * d + k] -= t;
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Losses and special-purpose nodes

/// Mean over rows of -sum_c target[c] * log softmax(logits)[c].
///
/// Targets are constants; every row must sum to 1 (within 1e-9). Rows are
/// stabilized by subtracting their maximum before exponentiating.
inline Tensor soft_cross_entropy(const Tensor& logits, const Tensor& targets) {
    detail::require_matrix(logits, "cross_entropy", "logits");
    detail::require_same_shape(logits, targets, "cross_entropy");
    const std::size_t n = logits.rows();
    const std::size_t c = logits.cols();
    if (c < 2) {
        throw ConfigError("cross_entropy: need at least 2 classes, got " + std::to_string(c));
    }
    std::vector<double> probs(n * c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.values().data() + i * c;
        const double* t = targets.values().data() + i * c;
        double tsum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            tsum += t[j];
        }
        if (std::abs(tsum - 1.0) > 1e-9) {
            throw InputError("cross_entropy: target row " + std::to_string(i) + " sums to " +
                             std::to_string(tsum) + ", expected 1");
        }
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(row[j] - mx);
        }
        const double log_z = std::log(z);
        for (std::size_t j = 0; j < c; ++j) {
            const double log_p = row[j] - mx - log_z;
            probs[i * c + j] = std::exp(log_p);
            if (t[j] != 0.0) {
                total -= t[j] * log_p;
            }
        }
    }
    const double loss = total / static_cast<double>(n);
    auto target_values = targets.detach();
    return detail::make_result({1}, {loss}, {logits},
                               [probs = std::move(probs), target_values, n](detail::Node& self) {
                                   auto& g = self.inputs[0]->ensure_grad();
                                   const double s = self.grad[0] / static_cast<double>(n);
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       g[i] += s * (probs[i] - target_values[i]);
                                   }
                               });
}

/// Mean cross-entropy against one-hot labels.
inline Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& labels) {
    detail::require_matrix(labels, "softmax_cross_entropy", "labels");
    const std::size_t c = labels.cols();
    if (c < 2) {
        throw ConfigError("softmax_cross_entropy: need at least 2 classes, got " + std::to_string(c));
    }
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double v = labels.at(i, j);
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                throw InputError("softmax_cross_entropy: label row " + std::to_string(i) +
                                 " is not one-hot");
            }
        }
        if (ones != 1) {
            throw InputError("softmax_cross_entropy: label row " + std::to_string(i) +
                             " is not one-hot");
        }
    }
    return soft_cross_entropy(logits, labels);
}

/// Identity in the forward pass; multiplies the upstream gradient by -lambda.
inline Tensor grad_reverse(const Tensor& x, double lambda) {
    if (lambda < 0.0) {
        throw ConfigError("grad_reverse: lambda must be nonnegative");
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return detail::make_result(x.shape(), std::move(out), {x}, [lambda](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += -lambda * self.grad[i];
        }
    });
}

/// z * mask element-wise with a constant {0,1} mask.
inline Tensor mask_elements(const Tensor& z, const Tensor& mask) {
    if (z.shape() != mask.shape()) {
        throw DimensionError("mask_elements: z has shape " + shape_string(z.shape()) +
                             " but mask has shape " + shape_string(mask.shape()));
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) {
            throw InputError("mask_elements: mask entry " + std::to_string(i) + " is not 0 or 1");
        }
    }
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = mask[i] != 0.0 ? z[i] : 0.0;
    }
    auto m = mask.detach();
    return detail::make_result(z.shape(), std::move(out), {z}, [m](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (m[i] != 0.0) {
                g[i] += self.grad[i];
            }
        }
    });
}

/// One-hot (n x classes) matrix for integer labels.
inline Tensor one_hot(std::span<const int> labels, std::size_t classes) {
    std::vector<double> v(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw InputError("one_hot: label " + std::to_string(labels[i]) + " outside [0," +
                             std::to_string(classes) + ")");
        }
        v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor({labels.size(), classes}, std::move(v));
}

} // namespace dgforge
