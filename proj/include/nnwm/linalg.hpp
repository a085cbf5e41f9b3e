#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace nnwm {

/// Thin SVD A = U * diag(s) * V^T for a row-major rows x cols matrix.
/// U is rows x r, V is cols x r, r = min(rows, cols), singular values sorted
/// descending.
struct SvdResult {
    std::vector<double> u; // rows x r
    std::vector<double> s; // r
    std::vector<double> v; // cols x r
    std::size_t rows = 0, cols = 0, r = 0;
};

namespace detail {

/// One-sided Jacobi on a tall matrix (rows >= cols), column-major working set.
inline void jacobi_svd_tall(std::vector<std::vector<double>>& b,
                            std::vector<std::vector<double>>& v) {
    const std::size_t n = b.size();
    const double eps = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < b[p].size(); ++i) {
                    alpha += b[p][i] * b[p][i];
                    beta += b[q][i] * b[q][i];
                    gamma += b[p][i] * b[q][i];
                }
                if (std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < b[p].size(); ++i) {
                    const double bp = b[p][i], bq = b[q][i];
                    b[p][i] = c * bp - s * bq;
                    b[q][i] = s * bp + c * bq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[p][i], vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        if (!rotated) break;
    }
}

} // namespace detail

inline SvdResult svd(const std::vector<double>& a, std::size_t rows, std::size_t cols) {
    if (a.size() != rows * cols) throw std::invalid_argument("svd: matrix size mismatch");
    const bool transposed = rows < cols;
    const std::size_t m = transposed ? cols : rows; // tall dims
    const std::size_t n = transposed ? rows : cols;

    // columns of the (possibly transposed) input
    std::vector<std::vector<double>> b(n, std::vector<double>(m));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            const double x = a[i * cols + j];
            if (transposed) b[i][j] = x;
            else b[j][i] = x;
        }
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

    detail::jacobi_svd_tall(b, v);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double norm = 0.0;
        for (double x : b[j]) norm += x * x;
        sigma[j] = std::sqrt(norm);
    }
    std::vector<std::size_t> ord(n);
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdResult res;
    res.rows = rows;
    res.cols = cols;
    res.r = n;
    res.s.resize(n);
    // tall-side singular vectors (normalized working columns) and V
    std::vector<std::vector<double>> utall(n, std::vector<double>(m, 0.0));
    std::vector<std::vector<double>> vsmall(n, std::vector<double>(n));
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t j = ord[jj];
        res.s[jj] = sigma[j];
        if (sigma[j] > 0.0)
            for (std::size_t i = 0; i < m; ++i) utall[jj][i] = b[j][i] / sigma[j];
        for (std::size_t i = 0; i < n; ++i) vsmall[jj][i] = v[j][i];
    }

    // map back: for A (rows x cols) = U S V^T
    res.u.assign(rows * n, 0.0);
    res.v.assign(cols * n, 0.0);
    for (std::size_t jj = 0; jj < n; ++jj)
        for (std::size_t i = 0; i < rows; ++i)
            res.u[i * n + jj] = transposed ? vsmall[jj][i] : utall[jj][i];
    for (std::size_t jj = 0; jj < n; ++jj)
        for (std::size_t i = 0; i < cols; ++i)
            res.v[i * n + jj] = transposed ? utall[jj][i] : vsmall[jj][i];
    return res;
}

} // namespace nnwm
