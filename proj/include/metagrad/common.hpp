#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metagrad {

using Vec = std::vector<double>;

// Signals divergence of an inner-loop quantity. Callers abort the current
// lifetime and count it; aborted lifetimes are excluded from aggregates.
struct NonFiniteError : std::runtime_error {
    explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

struct WindowOutOfRange : std::out_of_range {
    explicit WindowOutOfRange(const std::string& what) : std::out_of_range(what) {}
};

struct BucketMismatch : std::runtime_error {
    explicit BucketMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a whole run has to stop (sustained divergence); maps to exit code 3.
struct RunAborted : std::runtime_error {
    explicit RunAborted(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline void require_finite(std::span<const double> xs, const char* what) {
    if (!all_finite(xs)) throw NonFiniteError(std::string(what) + ": non-finite entry");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(std::span<double> x, double alpha) {
    for (double& v : x) v *= alpha;
}

inline Vec zeros(std::size_t n) { return Vec(n, 0.0); }

// Dense row-major matrix; rows index meta-parameters, cols inner parameters.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    void set_zero() { std::fill(data.begin(), data.end(), 0.0); }

    // J * v, length = rows
    Vec apply(std::span<const double> v) const {
        Vec out(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) out[r] = dot(row(r), v);
        return out;
    }
};

}  // namespace metagrad
