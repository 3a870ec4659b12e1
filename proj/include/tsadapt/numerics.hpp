#pragma once

#include <cmath>
#include <cstddef>

#include "tsadapt/matrix.hpp"
#include "tsadapt/rng.hpp"

namespace tsadapt {

/// Logistic function, written so that extreme inputs saturate to 0/1 instead
/// of overflowing exp().
inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Vec sigmoid(const Vec& x) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

inline Vec tanh_vec(const Vec& x) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    return out;
}

/// Glorot/Xavier uniform initialization: entries uniform in
/// +-sqrt(6/(rows+cols)), drawn in row-major order.
inline Matrix glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
    if (rows == 0 || cols == 0) throw DomainError("glorot_init: empty shape");
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(-limit, limit);
    return m;
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else
/// 1/(1-rate), so the mask has unit expectation and inference applies none.
inline Vec dropout_mask(std::size_t len, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout_mask: rate must be in [0,1)");
    Vec mask(len, 1.0);
    if (rate == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& v : mask) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
    return mask;
}

} // namespace tsadapt
