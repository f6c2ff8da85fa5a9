// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "olora/matrix.hpp"

namespace olora {

template <typename T>
struct ThinQr {
    Matrix<T> q;  // m x r, orthonormal columns
    Matrix<T> r;  // r x n, upper trapezoidal, nonnegative diagonal
};

/// Thin QR via Householder reflections, truncated to rank r.
///
/// Only the first r reflectors are formed: rows 0..r-1 of the reduced matrix
/// are final after step r-1, and columns 0..r-1 of Q involve reflectors
/// 0..r-1 only, so the result equals the first r columns/rows of the full
/// factorization at O(mnr) cost. Signs are normalized so diag(R) >= 0,
/// which makes the factorization unique and runs reproducible.
template <typename T>
ThinQr<T> thin_qr(const Matrix<T>& w, int rank) {
    const int m = w.rows();
    const int n = w.cols();
    if (rank < 1 || rank > std::min(m, n)) {
        throw RankError("thin_qr rank " + std::to_string(rank) + " out of range [1, " +
                        std::to_string(std::min(m, n)) + "] for " + w.shape());
    }
    if (!all_finite(w)) {
        throw NumericError("thin_qr input contains non-finite entries");
    }

    Matrix<T> a = w;                       // working copy, reduced in place
    Matrix<T> vs(rank, m);                 // reflector j lives in vs(j, j..m-1)
    std::vector<T> taus(rank, T(0));       // 2/(v'v); 0 marks an identity step

    for (int j = 0; j < rank; ++j) {
        double normx = 0;
        for (int i = j; i < m; ++i) {
            double v = static_cast<double>(a(i, j));
            normx += v * v;
        }
        normx = std::sqrt(normx);
        if (normx == 0.0) {
            continue;  // column already zero below and at the diagonal
        }
        const double x0 = static_cast<double>(a(j, j));
        const double alpha = x0 >= 0 ? -normx : normx;

        // v = x - alpha*e1, H = I - tau*v*v'
        double vnorm2 = 0;
        for (int i = j; i < m; ++i) {
            double vi = static_cast<double>(a(i, j)) - (i == j ? alpha : 0.0);
            vs(j, i) = static_cast<T>(vi);
            vnorm2 += vi * vi;
        }
        if (vnorm2 == 0.0) {
            continue;
        }
        const double tau = 2.0 / vnorm2;
        taus[j] = static_cast<T>(tau);

        a(j, j) = static_cast<T>(alpha);
        for (int i = j + 1; i < m; ++i) a(i, j) = T(0);
        for (int c = j + 1; c < n; ++c) {
            double dot = 0;
            for (int i = j; i < m; ++i) {
                dot += static_cast<double>(vs(j, i)) * static_cast<double>(a(i, c));
            }
            const T f = static_cast<T>(tau * dot);
            for (int i = j; i < m; ++i) a(i, c) -= f * vs(j, i);
        }
    }

    ThinQr<T> out;
    out.r = Matrix<T>(rank, n);
    for (int i = 0; i < rank; ++i) {
        for (int c = 0; c < n; ++c) out.r(i, c) = c < i ? T(0) : a(i, c);
    }

    // Q_r = H_0 * ... * H_{r-1} applied to the first r columns of I.
    out.q = Matrix<T>(m, rank);
    for (int j = 0; j < rank; ++j) out.q(j, j) = T(1);
    for (int j = rank - 1; j >= 0; --j) {
        if (taus[j] == T(0)) continue;
        const double tau = static_cast<double>(taus[j]);
        for (int c = 0; c < rank; ++c) {
            double dot = 0;
            for (int i = j; i < m; ++i) {
                dot += static_cast<double>(vs(j, i)) * static_cast<double>(out.q(i, c));
            }
            const T f = static_cast<T>(tau * dot);
            for (int i = j; i < m; ++i) out.q(i, c) -= f * vs(j, i);
        }
    }

    for (int j = 0; j < rank; ++j) {
        if (out.r(j, j) < T(0)) {
            for (int c = 0; c < n; ++c) out.r(j, c) = -out.r(j, c);
            for (int i = 0; i < m; ++i) out.q(i, j) = -out.q(i, j);
        }
    }
    return out;
}

}  // namespace olora
