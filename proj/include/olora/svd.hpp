// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "olora/matrix.hpp"

namespace olora {

inline constexpr int kSvdMaxDim = 256;  // diagnostics only, keeps Jacobi cheap

/// Singular values by one-sided (Hestenes) Jacobi: rotate column pairs until
/// mutually orthogonal, then the column norms are the singular values.
/// Accumulation is done in double regardless of T. Returns min(rows, cols)
/// values, nonincreasing, all >= 0.
template <typename T>
std::vector<double> svd_values(const Matrix<T>& m) {
    if (std::min(m.rows(), m.cols()) > kSvdMaxDim) {
        throw SizeError("svd_values limited to min dimension <= " + std::to_string(kSvdMaxDim) +
                        ", got " + m.shape());
    }
    if (!all_finite(m)) {
        throw NumericError("svd_values input contains non-finite entries");
    }

    // Orthogonalize the smaller side as columns.
    const bool flip = m.cols() > m.rows();
    const int rows = flip ? m.cols() : m.rows();
    const int cols = flip ? m.rows() : m.cols();
    std::vector<double> a(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            double v = static_cast<double>(m(i, j));
            if (flip) {
                a[static_cast<size_t>(j) * cols + i] = v;
            } else {
                a[static_cast<size_t>(i) * cols + j] = v;
            }
        }
    }
    auto col = [&](int c, int r) -> double& { return a[static_cast<size_t>(r) * cols + c]; };

    constexpr double conv_tol = 1e-14;
    constexpr int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < cols - 1; ++p) {
            for (int q = p + 1; q < cols; ++q) {
                double app = 0, aqq = 0, apq = 0;
                for (int r = 0; r < rows; ++r) {
                    const double vp = col(p, r), vq = col(q, r);
                    app += vp * vp;
                    aqq += vq * vq;
                    apq += vp * vq;
                }
                if (apq == 0.0 || std::fabs(apq) <= conv_tol * std::sqrt(app * aqq)) {
                    continue;
                }
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t =
                    (zeta >= 0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int r = 0; r < rows; ++r) {
                    const double vp = col(p, r), vq = col(q, r);
                    col(p, r) = c * vp - s * vq;
                    col(q, r) = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sigma(cols);
    for (int c = 0; c < cols; ++c) {
        double acc = 0;
        for (int r = 0; r < rows; ++r) acc += col(c, r) * col(c, r);
        sigma[c] = std::sqrt(acc);
    }
    std::sort(sigma.begin(), sigma.end(), std::greater<double>());
    return sigma;
}

}  // namespace olora
