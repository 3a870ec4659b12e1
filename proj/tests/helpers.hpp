#pragma once

#include <cmath>
#include <functional>

#include "tsadapt/gru.hpp"

namespace tsadapt::testing {

/// Relative error with a floor so near-zero entries compare on an absolute
/// scale instead of blowing up.
inline double rel_error(double a, double b, double floor = 1e-2) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite differences over every parameter of a GRU stack.
/// loss() must be a pure function of the current parameter values.
inline StackGrads numeric_stack_gradient(GruStackParams& params,
                                         const std::function<double()>& loss,
                                         double step = 1e-5) {
    StackGrads grads = StackGrads::zeros_like(params);
    auto param_spans = params.param_spans();
    auto grad_spans = grads.param_spans();
    for (std::size_t s = 0; s < param_spans.size(); ++s) {
        for (std::size_t i = 0; i < param_spans[s].size(); ++i) {
            double& v = param_spans[s][i];
            const double backup = v;
            v = backup + step;
            const double up = loss();
            v = backup - step;
            const double down = loss();
            v = backup;
            grad_spans[s][i] = (up - down) / (2.0 * step);
        }
    }
    return grads;
}

/// Max rel_error between analytic and numeric gradients over all buffers.
inline double max_gradient_error(const StackGrads& analytic, const StackGrads& numeric) {
    auto a = analytic.const_spans();
    auto n = numeric.const_spans();
    double worst = 0.0;
    for (std::size_t s = 0; s < a.size(); ++s)
        for (std::size_t i = 0; i < a[s].size(); ++i)
            worst = std::max(worst, rel_error(a[s][i], n[s][i]));
    return worst;
}

} // namespace tsadapt::testing
