#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vlkd/errors.hpp"
#include "vlkd/tensor.hpp"

namespace vlkd {

// Dense helpers for the projection initialization. Everything here runs in
// double regardless of the model scalar type; the caller casts down.

namespace detail {

// In-place Cholesky of a row-major SPD matrix; returns false on a bad pivot.
inline bool cholesky(std::vector<double>& a, int n, double* worst_pivot) {
    *worst_pivot = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<size_t>(i) * n + j];
            for (int k = 0; k < j; ++k) s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
            if (i == j) {
                if (s <= 0.0) {
                    *worst_pivot = s;
                    return false;
                }
                a[static_cast<size_t>(i) * n + j] = std::sqrt(s);
            } else {
                a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
            }
        }
    }
    return true;
}

// solve (L L^T) x = b for many right-hand sides, b row-major n x m
inline void cholesky_solve(const std::vector<double>& l, int n, std::vector<double>& b, int m) {
    for (int c = 0; c < m; ++c) {
        for (int i = 0; i < n; ++i) {
            double s = b[static_cast<size_t>(i) * m + c];
            for (int k = 0; k < i; ++k) s -= l[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k) * m + c];
            b[static_cast<size_t>(i) * m + c] = s / l[static_cast<size_t>(i) * n + i];
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = b[static_cast<size_t>(i) * m + c];
            for (int k = i + 1; k < n; ++k) s -= l[static_cast<size_t>(k) * n + i] * b[static_cast<size_t>(k) * m + c];
            b[static_cast<size_t>(i) * m + c] = s / l[static_cast<size_t>(i) * n + i];
        }
    }
}

} // namespace detail

// Right pseudo-inverse of a wide full-row-rank matrix W (r x c, r <= c):
// X = W^T (W W^T)^{-1}, the minimizer of ||W X - I||_F. Solved through a
// Cholesky factorization of the Gram matrix; a ridge of 1e-8 is added once
// if the factorization hits a non-positive pivot.
inline std::vector<double> pseudo_inverse(const std::vector<double>& w, int r, int c) {
    if (r > c)
        throw ShapeError("pseudo_inverse: expected a wide matrix, got " + std::to_string(r) + "x" + std::to_string(c));
    // Gram matrix G = W W^T
    std::vector<double> gram(static_cast<size_t>(r) * r, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int k = 0; k < c; ++k) s += w[static_cast<size_t>(i) * c + k] * w[static_cast<size_t>(j) * c + k];
            gram[static_cast<size_t>(i) * r + j] = s;
            gram[static_cast<size_t>(j) * r + i] = s;
        }
    double max_diag = 0.0;
    for (int i = 0; i < r; ++i) max_diag = std::max(max_diag, gram[static_cast<size_t>(i) * r + i]);

    auto factor = gram;
    double pivot = 0.0;
    bool ok = detail::cholesky(factor, r, &pivot);
    if (!ok) {
        factor = gram;
        for (int i = 0; i < r; ++i) factor[static_cast<size_t>(i) * r + i] += 1e-8;
        if (!detail::cholesky(factor, r, &pivot))
            throw NumericError("pseudo_inverse: rank-deficient input, smallest singular value estimate " +
                               std::to_string(std::sqrt(std::max(pivot, 0.0))));
    }
    double min_l = factor[0];
    for (int i = 0; i < r; ++i) min_l = std::min(min_l, factor[static_cast<size_t>(i) * r + i]);

    // solve G Y = W, X = Y^T
    auto y = w;
    detail::cholesky_solve(factor, r, y, c);
    std::vector<double> x(static_cast<size_t>(c) * r);
    for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) x[static_cast<size_t>(k) * r + i] = y[static_cast<size_t>(i) * c + k];

    // a ridge can only rescue mild conditioning trouble; verify the result
    // actually inverts W before handing it back
    double residual = 0.0;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            double s = 0.0;
            for (int k = 0; k < c; ++k) s += w[static_cast<size_t>(i) * c + k] * x[static_cast<size_t>(k) * r + j];
            const double d = s - (i == j ? 1.0 : 0.0);
            residual += d * d;
        }
    if (std::sqrt(residual) > 1e-3)
        throw NumericError("pseudo_inverse: rank-deficient beyond ridge rescue, smallest singular value estimate " +
                           std::to_string(min_l) + ", residual " + std::to_string(std::sqrt(residual)));
    return x;
}

template <typename T>
TensorPtr<T> pseudo_inverse(const TensorPtr<T>& w) {
    if (w->shape.size() != 2)
        throw ShapeError("pseudo_inverse: expected 2-d tensor, got " + shape_str(w->shape));
    const int r = w->shape[0], c = w->shape[1];
    std::vector<double> wd(w->v.begin(), w->v.end());
    auto xd = pseudo_inverse(wd, r, c);
    auto out = make_tensor<T>({c, r});
    for (size_t i = 0; i < xd.size(); ++i) out->v[i] = static_cast<T>(xd[i]);
    return out;
}

} // namespace vlkd
