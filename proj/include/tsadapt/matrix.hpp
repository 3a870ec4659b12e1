#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tsadapt/errors.hpp"

namespace tsadapt {

using Vec = std::vector<double>;

/// Dense row-major matrix of 64-bit reals. All training math in this project
/// runs on doubles; gradient checks need the precision.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data; // rows*cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double* row(std::size_t i) { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    void fill(double v) { data.assign(data.size(), v); }
};

inline void require_shape(const Matrix& m, std::size_t r, std::size_t c, const char* what) {
    if (m.rows != r || m.cols != c)
        throw StructuralError(std::string(what) + ": expected " + std::to_string(r) + "x" +
                              std::to_string(c) + ", got " + std::to_string(m.rows) + "x" +
                              std::to_string(m.cols));
}

/// y = A * x
inline void matvec(const Matrix& a, const Vec& x, Vec& y) {
    if (x.size() != a.cols) throw StructuralError("matvec: dimension mismatch");
    y.assign(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* r = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += r[j] * x[j];
        y[i] = acc;
    }
}

/// y += A * x
inline void matvec_add(const Matrix& a, const Vec& x, Vec& y) {
    if (x.size() != a.cols || y.size() != a.rows)
        throw StructuralError("matvec_add: dimension mismatch");
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* r = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += r[j] * x[j];
        y[i] += acc;
    }
}

/// y += A^T * x  (x has a.rows entries, y has a.cols)
inline void matvec_transposed_add(const Matrix& a, const Vec& x, Vec& y) {
    if (x.size() != a.rows || y.size() != a.cols)
        throw StructuralError("matvec_transposed_add: dimension mismatch");
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) y[j] += xi * r[j];
    }
}

/// A += u * v^T
inline void outer_add(Matrix& a, const Vec& u, const Vec& v) {
    if (u.size() != a.rows || v.size() != a.cols)
        throw StructuralError("outer_add: dimension mismatch");
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double ui = u[i];
        if (ui == 0.0) continue;
        double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) r[j] += ui * v[j];
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw StructuralError("matmul: dimension mismatch");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw StructuralError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw StructuralError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void hadamard(const Vec& a, const Vec& b, Vec& out) {
    if (a.size() != b.size()) throw StructuralError("hadamard: length mismatch");
    out.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(m.data); }

} // namespace tsadapt
