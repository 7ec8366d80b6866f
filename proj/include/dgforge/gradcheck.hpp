#pragma once

// Central finite-difference oracle for the autograd engine.

#include "dgforge/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace dgforge {

namespace detail {

inline double checked_eval(const std::function<Tensor()>& f) {
    const Tensor out = f();
    if (out.size() != 1) {
        throw OracleError("finite_diff_check: function must return a scalar, got " +
                          shape_string(out.shape()));
    }
    const double v = out.item();
    if (!std::isfinite(v)) {
        throw OracleError("finite_diff_check: function value is not finite");
    }
    return v;
}

} // namespace detail

/// Max over all coordinates of |analytic - fd| / max(1, |fd|), where the
/// analytic gradient comes from backward() on `graph` and fd is the central
/// difference (v(x+eps) - v(x-eps)) / 2eps of `value`. The two differ only
/// for graphs whose backward is not the derivative of their forward value
/// (gradient reversal). Both must rebuild from the current parameter values
/// on each call. Parameters are restored and their grads cleared on return.
inline double finite_diff_check(const std::function<Tensor()>& graph, const std::function<Tensor()>& value,
                                std::vector<Tensor> params, double eps = 1e-5) {
    for (auto& p : params) {
        p.zero_grad();
    }
    {
        const Tensor out = graph();
        if (!std::isfinite(out.item())) {
            throw OracleError("finite_diff_check: function value is not finite");
        }
        backward(out);
    }
    double worst = 0.0;
    for (auto& p : params) {
        const std::vector<double> analytic = p.grad();
        auto values = p.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = detail::checked_eval(value);
            values[i] = saved - eps;
            const double down = detail::checked_eval(value);
            values[i] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
        p.zero_grad();
    }
    return worst;
}

inline double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                double eps = 1e-5) {
    return finite_diff_check(f, f, std::move(params), eps);
}

/// Single-tensor form: checks the gradient of f at x.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double eps = 1e-5) {
    Tensor leaf = x.clone(true);
    return finite_diff_check([&] { return f(leaf); }, {leaf}, eps);
}

} // namespace dgforge
