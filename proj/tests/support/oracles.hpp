#pragma once

// Test-only reference implementations. Nothing here calls into the code under test's
// kernels: the scalar block is written out with plain loops, and gradients come from
// central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// Row-major matrix of doubles.
struct Mat {
    std::size_t r = 0, c = 0;
    Vec v;
    double& at(std::size_t i, std::size_t j) { return v[i * c + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

/// Straight-line evaluation of one expert block for a single input row.
inline Vec ffn_row(const Vec& x, const Mat& w1, const Vec& b1, const Mat& w2, const Vec& b2, const Mat& w3,
                   const Vec& b3, const Vec& gamma, const Vec& beta, bool layer_norm, double eps = 1e-5) {
    Vec h1(w1.c), h2(w2.c), z(w3.c);
    for (std::size_t j = 0; j < w1.c; ++j) {
        double s = b1[j];
        for (std::size_t i = 0; i < w1.r; ++i) s += x[i] * w1.at(i, j);
        h1[j] = s > 0 ? s : 0;
    }
    for (std::size_t j = 0; j < w2.c; ++j) {
        double s = b2[j];
        for (std::size_t i = 0; i < w2.r; ++i) s += h1[i] * w2.at(i, j);
        h2[j] = s > 0 ? s : 0;
    }
    for (std::size_t j = 0; j < w3.c; ++j) {
        double s = b3[j];
        for (std::size_t i = 0; i < w3.r; ++i) s += h2[i] * w3.at(i, j);
        z[j] = s;
    }
    if (!layer_norm) return z;
    double mean = 0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(z.size());
    double var = 0;
    for (double v : z) var += (v - mean) * (v - mean);
    var /= static_cast<double>(z.size());
    Vec y(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) y[j] = gamma[j] * (z[j] - mean) / std::sqrt(var + eps) + beta[j];
    return y;
}

/// Central difference of f with respect to every entry of `param` (perturbed in place, restored after).
inline Vec finite_diff(const std::function<double()>& f, double* param, std::size_t n, double h = 1e-5) {
    Vec g(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double saved = param[i];
        param[i] = saved + h;
        const double fp = f();
        param[i] = saved - h;
        const double fm = f();
        param[i] = saved;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

/// |a - b| / max(|a|, |b|, floor): relative error that stays meaningful near zero.
inline double rel_err(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
