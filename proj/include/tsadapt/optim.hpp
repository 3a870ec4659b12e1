#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tsadapt/errors.hpp"

namespace tsadapt {

/// Mutable view over a model's parameter buffers, in a fixed documented order.
using ParamRefs = std::vector<std::span<double>>;
using GradRefs = std::vector<std::span<const double>>;

/// Bias-corrected Adam state. Moment buffers mirror the parameter set
/// shape-for-shape; step_count advances by exactly one per adam_step.
struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    long step_count = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const ParamRefs& params, double lr) {
        AdamState s;
        s.lr = lr;
        s.first_moment.reserve(params.size());
        s.second_moment.reserve(params.size());
        for (const auto& p : params) {
            s.first_moment.emplace_back(p.size(), 0.0);
            s.second_moment.emplace_back(p.size(), 0.0);
        }
        return s;
    }

    bool matches(const ParamRefs& params) const {
        if (first_moment.size() != params.size()) return false;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (first_moment[i].size() != params[i].size()) return false;
        return true;
    }
};

/// One Adam update: m,v decay toward the gradient statistics, then parameters
/// move by -lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(ParamRefs params, const GradRefs& grads, AdamState& state) {
    if (params.size() != grads.size())
        throw StructuralError("adam_step: parameter/gradient set size mismatch");
    if (!state.matches(params)) throw StructuralError("adam_step: state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].size() != grads[i].size())
            throw StructuralError("adam_step: shape mismatch in buffer " + std::to_string(i));

    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i];
        auto g = grads[i];
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

} // namespace tsadapt
