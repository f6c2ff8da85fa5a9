// SPDX-License-Identifier: Apache-2.0
//
// linalg: matmul / frobenius / thin QR / Jacobi singular values.
// Oracles are independent of the implementation path: modified Gram-Schmidt
// for QR, a two-sided symmetric Jacobi eigensolver for singular values.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "olora/matrix.hpp"
#include "olora/qr.hpp"
#include "olora/rng.hpp"
#include "olora/svd.hpp"

using namespace olora;

namespace {

// Modified Gram-Schmidt with the same nonnegative-diagonal convention.
// Test-only oracle; never used by the implementation.
template <typename T>
ThinQr<T> mgs_qr(const Matrix<T>& w, int rank) {
    const int m = w.rows(), n = w.cols();
    ThinQr<T> out{Matrix<T>(m, rank), Matrix<T>(rank, n)};
    Matrix<T> v = w;
    for (int j = 0; j < rank; ++j) {
        double norm = 0;
        for (int i = 0; i < m; ++i) norm += double(v(i, j)) * double(v(i, j));
        norm = std::sqrt(norm);
        out.r(j, j) = T(norm);
        if (norm > 0) {
            for (int i = 0; i < m; ++i) out.q(i, j) = T(double(v(i, j)) / norm);
        }
        for (int c = j + 1; c < n; ++c) {
            double dot = 0;
            for (int i = 0; i < m; ++i) dot += double(out.q(i, j)) * double(v(i, c));
            for (int i = 0; i < m; ++i) v(i, c) -= T(dot) * out.q(i, j);
            out.r(j, c) = T(dot);
        }
    }
    return out;
}

// Symmetric two-sided Jacobi eigenvalues, for the sqrt(eig(M^T M)) oracle.
std::vector<double> sym_eigenvalues(std::vector<double> a, int n) {
    auto at = [&](int i, int j) -> double& { return a[size_t(i) * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (std::sqrt(off) < 1e-14) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (at(p, q) == 0) continue;
                const double theta = (at(q, q) - at(p, p)) / (2 * at(p, q));
                const double t =
                    (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(1 + theta * theta));
                const double c = 1 / std::sqrt(1 + t * t), s = c * t;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (int i = 0; i < n; ++i) ev[i] = at(i, i);
    std::sort(ev.begin(), ev.end(), std::greater<double>());
    return ev;
}

template <typename T>
double orthonormality_defect(const Matrix<T>& q) {
    Matrix<T> gram = matmul_ex(q, q, true, false);
    for (int i = 0; i < gram.rows(); ++i) gram(i, i) -= T(1);
    return frobenius_norm(gram);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    Rng rng(11, "matmul");
    Matrix<double> m = random_uniform<double>(3, 5, -2.0, 2.0, rng);
    Matrix<double> i3 = Matrix<double>::identity(3);
    CHECK(bitwise_equal(matmul(i3, m), m));

    Matrix<double> a = Matrix<double>::from_data(2, 2, {1, 2, 3, 4});
    Matrix<double> b = Matrix<double>::from_data(2, 1, {5, 6});
    Matrix<double> c = matmul(a, b);
    CHECK(c(0, 0) == 17.0);
    CHECK(c(1, 0) == 39.0);
}

TEST_CASE("matmul shape error names both shapes") {
    Matrix<double> a(2, 3), b(2, 3);
    CHECK_THROWS_WITH(matmul(a, b),
                      Catch::Matchers::ContainsSubstring("2x3") &&
                          Catch::Matchers::ContainsSubstring("mismatch"));
}

TEST_CASE("matmul_ex transpose variants agree with explicit transpose") {
    Rng rng(5, "transs");
    Matrix<double> a = random_uniform<double>(4, 6, -1, 1, rng);
    Matrix<double> b = random_uniform<double>(4, 3, -1, 1, rng);
    CHECK(max_abs_diff(matmul_ex(a, b, true, false), matmul(transpose(a), b)) < 1e-15);
    Matrix<double> c = random_uniform<double>(5, 6, -1, 1, rng);
    CHECK(max_abs_diff(matmul_ex(a, c, false, true), matmul(a, transpose(c))) < 1e-15);
    Matrix<double> d = random_uniform<double>(3, 4, -1, 1, rng);
    CHECK(max_abs_diff(matmul_ex(a, d, true, true),
                       matmul(transpose(a), transpose(d))) < 1e-15);
}

TEST_CASE("frobenius norm basics") {
    CHECK(frobenius_norm(Matrix<double>(4, 4)) == 0.0);
    CHECK(frobenius_norm(Matrix<double>::identity(3)) == Catch::Approx(std::sqrt(3.0)));
    CHECK(frobenius_norm(Matrix<double>::from_data(1, 2, {3, 4})) == Catch::Approx(5.0));
}

TEST_CASE("matrix construction validates input") {
    CHECK_THROWS_AS(Matrix<double>(0, 3), ShapeError);
    CHECK_THROWS_AS(Matrix<double>::from_data(2, 2, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(
        Matrix<double>::from_data(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}),
        NumericError);
}

TEST_CASE("thin QR of identity") {
    auto [q, r] = thin_qr(Matrix<double>::identity(4), 2);
    REQUIRE(q.rows() == 4);
    REQUIRE(q.cols() == 2);
    REQUIRE(r.rows() == 2);
    REQUIRE(r.cols() == 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) CHECK(q(i, j) == (i == j ? 1.0 : 0.0));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) CHECK(r(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("thin QR hand case 3-4-5") {
    Matrix<double> w = Matrix<double>::from_data(2, 2, {3, 0, 4, 0});
    auto [q, r] = thin_qr(w, 1);
    CHECK(q(0, 0) == Catch::Approx(0.6).margin(1e-15));
    CHECK(q(1, 0) == Catch::Approx(0.8).margin(1e-15));
    CHECK(r(0, 0) == Catch::Approx(5.0).margin(1e-15));
    CHECK(r(0, 1) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("thin QR rank and finiteness errors") {
    Matrix<double> w(4, 3);
    CHECK_THROWS_AS(thin_qr(w, 0), RankError);
    CHECK_THROWS_AS(thin_qr(w, 4), RankError);
    Matrix<double> bad(2, 2);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(thin_qr(bad, 1), NumericError);
}

TEST_CASE("thin QR orthonormality vs MGS oracle, 64-bit") {
    Rng rng(101, "qr-mgs");
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 8, n = 6, r = 4;
        Matrix<double> w = random_uniform<double>(m, n, -1, 1, rng);
        auto hh = thin_qr(w, r);
        CHECK(orthonormality_defect(hh.q) <= 1e-12);

        // Unique factorization (positive diagonal) -> MGS must match entrywise.
        auto gs = mgs_qr(w, r);
        CHECK(max_abs_diff(hh.q, gs.q) < 1e-9);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < n; ++j)
                CHECK(std::fabs(hh.r(i, j) - gs.r(i, j)) < 1e-9);
    }
}

TEST_CASE("thin QR reconstruction and sign convention over random matrices") {
    Rng rng(7, "qr-recon");
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 2 + int(rng.index(30));
        const int n = 2 + int(rng.index(30));
        Matrix<double> w = random_uniform<double>(m, n, -3, 3, rng);
        const int full = std::min(m, n);
        auto f = thin_qr(w, full);
        for (int i = 0; i < full; ++i) CHECK(f.r(i, i) >= 0.0);
        CHECK(frobenius_norm(add(matmul(f.q, f.r), scale(w, -1.0))) / frobenius_norm(w) <= 1e-12);

        const int r = 1 + int(rng.index(full));
        auto t = thin_qr(w, r);
        CHECK(orthonormality_defect(t.q) <= 1e-12);
        // Truncation consistency: leading r rows/cols of the full factors.
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < r; ++j) CHECK(t.q(i, j) == Catch::Approx(f.q(i, j)).margin(1e-12));
    }
}

TEST_CASE("thin QR 32-bit tolerances") {
    Rng rng(13, "qr32");
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 4 + int(rng.index(28));
        const int n = 4 + int(rng.index(28));
        Matrix<float> w = random_uniform<float>(m, n, -1, 1, rng);
        const int full = std::min(m, n);
        auto f = thin_qr(w, full);
        CHECK(orthonormality_defect(f.q) <= 1e-5);
        CHECK(frobenius_norm(add(matmul(f.q, f.r), scale(w, -1.0f))) / frobenius_norm(w) <= 1e-6);
    }
}

TEST_CASE("thin QR is deterministic") {
    Rng rng(3, "qr-det");
    Matrix<double> w = random_uniform<double>(16, 12, -1, 1, rng);
    auto a = thin_qr(w, 5);
    auto b = thin_qr(w, 5);
    CHECK(bitwise_equal(a.q, b.q));
    CHECK(bitwise_equal(a.r, b.r));
}

TEST_CASE("spectrum transport: singular values ride through orthonormal Q") {
    Rng rng(23, "qr-spec");
    Matrix<double> w = random_uniform<double>(10, 8, -1, 1, rng);
    auto t = thin_qr(w, 4);
    auto s_prod = svd_values(matmul(t.q, t.r));
    auto s_r = svd_values(t.r);
    REQUIRE(s_prod.size() >= 4);
    for (int i = 0; i < 4; ++i) CHECK(s_prod[i] == Catch::Approx(s_r[i]).margin(1e-10));
}

TEST_CASE("svd of diagonal and zero matrices") {
    Matrix<double> d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 1;
    d(2, 2) = 2;
    auto s = svd_values(d);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == Catch::Approx(3.0).margin(1e-14));
    CHECK(s[1] == Catch::Approx(2.0).margin(1e-14));
    CHECK(s[2] == Catch::Approx(1.0).margin(1e-14));

    auto z = svd_values(Matrix<double>(2, 2));
    REQUIRE(z.size() == 2);
    CHECK(z[0] == 0.0);
    CHECK(z[1] == 0.0);
}

TEST_CASE("svd matches sqrt of eigenvalues of M^T M") {
    Rng rng(31, "svd-eig");
    for (int trial = 0; trial < 10; ++trial) {
        Matrix<double> m = random_uniform<double>(6, 4, -2, 2, rng);
        Matrix<double> g = matmul_ex(m, m, true, false);
        std::vector<double> gd(g.data(), g.data() + g.size());
        auto ev = sym_eigenvalues(gd, 4);
        auto sv = svd_values(m);
        REQUIRE(sv.size() == 4);
        for (int i = 0; i < 4; ++i) {
            CHECK(sv[i] == Catch::Approx(std::sqrt(std::max(0.0, ev[i]))).margin(1e-10));
        }
    }
}

TEST_CASE("svd size limit") {
    Matrix<double> big(300, 300);
    CHECK_THROWS_AS(svd_values(big), SizeError);
    // 300x4 is fine: only the min dimension is limited.
    CHECK_NOTHROW(svd_values(Matrix<double>(300, 4)));
}
