// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "olora/common.hpp"
#include "olora/rng.hpp"

namespace olora {

/// Dense row-major matrix, the numeric carrier for everything else.
/// T is float (training) or double (verification).
template <typename T>
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
        if (rows <= 0 || cols <= 0) {
            throw ShapeError("matrix dimensions must be positive, got " + shape_str(rows, cols));
        }
        data_.assign(static_cast<size_t>(rows) * cols, T(0));
    }

    // Validating entry point for user-supplied data.
    static Matrix from_data(int rows, int cols, std::vector<T> data) {
        Matrix m(rows, cols);
        if (data.size() != m.data_.size()) {
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match " +
                             shape_str(rows, cols));
        }
        m.data_ = std::move(data);
        for (T v : m.data_) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw NumericError("matrix entries must be finite");
            }
        }
        return m;
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
    T operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T* row(int i) { return data_.data() + static_cast<size_t>(i) * cols_; }
    const T* row(int i) const { return data_.data() + static_cast<size_t>(i) * cols_; }

    static std::string shape_str(int r, int c) {
        return std::to_string(r) + "x" + std::to_string(c);
    }
    std::string shape() const { return shape_str(rows_, cols_); }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

template <typename T>
bool same_shape(const Matrix<T>& a, const Matrix<T>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

template <typename T>
bool bitwise_equal(const Matrix<T>& a, const Matrix<T>& b) {
    return same_shape(a, b) &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
    for (size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(static_cast<double>(m.data()[i]))) return false;
    }
    return true;
}

/// General product op(a)*op(b) with optional transposes. Loop orders are
/// chosen per case so the innermost loop runs over contiguous memory.
template <typename T>
Matrix<T> matmul_ex(const Matrix<T>& a, const Matrix<T>& b, bool trans_a, bool trans_b) {
    const int m = trans_a ? a.cols() : a.rows();
    const int k = trans_a ? a.rows() : a.cols();
    const int kb = trans_b ? b.cols() : b.rows();
    const int n = trans_b ? b.rows() : b.cols();
    if (k != kb) {
        throw ShapeError("matmul inner dimensions differ: " + a.shape() + (trans_a ? "^T" : "") +
                         " x " + b.shape() + (trans_b ? "^T" : ""));
    }
    Matrix<T> c(m, n);
    if (!trans_a && !trans_b) {
        for (int i = 0; i < m; ++i) {
            const T* arow = a.row(i);
            T* crow = c.row(i);
            for (int p = 0; p < k; ++p) {
                const T av = arow[p];
                const T* brow = b.row(p);
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (trans_a && !trans_b) {
        for (int p = 0; p < k; ++p) {
            const T* arow = a.row(p);
            const T* brow = b.row(p);
            for (int i = 0; i < m; ++i) {
                const T av = arow[i];
                T* crow = c.row(i);
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (int i = 0; i < m; ++i) {
            const T* arow = a.row(i);
            T* crow = c.row(i);
            for (int j = 0; j < n; ++j) {
                const T* brow = b.row(j);
                T acc = T(0);
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] = acc;
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            T* crow = c.row(i);
            for (int j = 0; j < n; ++j) {
                T acc = T(0);
                for (int p = 0; p < k; ++p) acc += a(p, i) * b(j, p);
                crow[j] = acc;
            }
        }
    }
    return c;
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape() + " x " + b.shape());
    }
    return matmul_ex(a, b, false, false);
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
    Matrix<T> t(m.cols(), m.rows());
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    }
    return t;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
    if (!same_shape(a, b)) {
        throw ShapeError("add shape mismatch: " + a.shape() + " vs " + b.shape());
    }
    Matrix<T> c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

/// a + s*b, used on both sides of the OLoRA init/merge pair so the
/// low-rank product cancels bitwise.
template <typename T>
Matrix<T> scaled_add(const Matrix<T>& a, T s, const Matrix<T>& b) {
    if (!same_shape(a, b)) {
        throw ShapeError("scaled_add shape mismatch: " + a.shape() + " vs " + b.shape());
    }
    Matrix<T> c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data()[i] += s * b.data()[i];
    return c;
}

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T s) {
    Matrix<T> c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
    return c;
}

template <typename T>
double frobenius_norm(const Matrix<T>& m) {
    double acc = 0;
    for (size_t i = 0; i < m.size(); ++i) {
        double v = static_cast<double>(m.data()[i]);
        acc += v * v;
    }
    return std::sqrt(acc);
}

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    if (!same_shape(a, b)) {
        throw ShapeError("max_abs_diff shape mismatch: " + a.shape() + " vs " + b.shape());
    }
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = std::fabs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
        if (d > worst) worst = d;
    }
    return worst;
}

template <typename T>
Matrix<T> random_uniform(int rows, int cols, double lo, double hi, Rng& rng) {
    Matrix<T> m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<T>(rng.uniform_range(lo, hi));
    }
    return m;
}

}  // namespace olora
