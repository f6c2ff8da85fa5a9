// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "olora/autograd.hpp"
#include "olora/matrix.hpp"
#include "olora/qr.hpp"
#include "olora/rng.hpp"
#include "olora/svd.hpp"

namespace olora {

struct AdapterConfig {
    int rank = 8;
    double alpha = 16.0;
    std::optional<double> scale;  // unset -> alpha/rank
    double dropout = 0.05;
    Method method = Method::olora;
    uint64_t seed = 0;

    double effective_scale() const { return scale.has_value() ? *scale : alpha / rank; }

    void validate() const {
        if (rank < 1) throw RankError("adapter rank must be >= 1, got " + std::to_string(rank));
        if (alpha <= 0) throw ConfigError("alpha must be positive");
        if (effective_scale() < 0) throw ConfigError("scale must be nonnegative");
        if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
    }
};

/// Frozen base weight plus a trainable low-rank factor pair. The stored base
/// is the weight the forward pass multiplies by: the pre-trained matrix for
/// LoRA, and w - s*B0*A0 for OLoRA (so the effective weight at init equals
/// the pre-trained matrix for both methods).
template <typename T>
struct AdaptedLinear {
    Matrix<T> base;
    Param<T> b_factor;  // d x r
    Param<T> a_factor;  // r x k
    T scale = T(1);
    double dropout_p = 0.0;
    Method method = Method::lora;

    int d() const { return base.rows(); }
    int k() const { return base.cols(); }
    int rank() const { return b_factor.value.cols(); }
};

namespace detail {

inline void check_rank(int rank, int d, int k) {
    const int limit = std::min(d, k);
    if (rank < 1 || rank > limit) {
        throw RankError("adapter rank " + std::to_string(rank) + " out of range [1, " +
                        std::to_string(limit) + "] for layer " + std::to_string(d) + "x" +
                        std::to_string(k));
    }
}

}  // namespace detail

/// Standard LoRA: B = 0, A ~ U(-1/sqrt(k), 1/sqrt(k)) from the seeded PRNG.
/// The zero B makes the adapter branch vanish, so the initial effective
/// weight is the pre-trained weight bit for bit.
template <typename T>
AdaptedLinear<T> lora_init(const Matrix<T>& w, const AdapterConfig& cfg) {
    cfg.validate();
    if (cfg.method != Method::lora) throw ConfigError("lora_init called with method=olora");
    detail::check_rank(cfg.rank, w.rows(), w.cols());
    if (!all_finite(w)) throw NumericError("lora_init: base weight has non-finite entries");

    AdaptedLinear<T> layer;
    layer.base = w;
    layer.method = Method::lora;
    layer.scale = T(cfg.effective_scale());
    layer.dropout_p = cfg.dropout;
    layer.b_factor = Param<T>("B", Matrix<T>(w.rows(), cfg.rank));
    Rng rng(cfg.seed, "lora-a-init");
    const double bound = 1.0 / std::sqrt(double(w.cols()));
    layer.a_factor = Param<T>("A", random_uniform<T>(cfg.rank, w.cols(), -bound, bound, rng));
    return layer;
}

/// OLoRA: B, A seeded from the thin QR of the pre-trained weight and the
/// scaled product subtracted from the stored base, so the adapter starts on
/// an orthonormal basis while the layer still computes the original map.
template <typename T>
AdaptedLinear<T> olora_init(const Matrix<T>& w, const AdapterConfig& cfg) {
    cfg.validate();
    if (cfg.method != Method::olora) throw ConfigError("olora_init called with method=lora");
    detail::check_rank(cfg.rank, w.rows(), w.cols());
    if (!all_finite(w)) throw NumericError("olora_init: base weight has non-finite entries");

    AdaptedLinear<T> layer;
    layer.method = Method::olora;
    layer.scale = T(cfg.effective_scale());
    layer.dropout_p = cfg.dropout;
    auto qr = thin_qr(w, cfg.rank);
    layer.b_factor = Param<T>("B", std::move(qr.q));
    layer.a_factor = Param<T>("A", std::move(qr.r));
    // Same product expression as merge(), so init + merge cancels bitwise.
    layer.base = scaled_add(w, -layer.scale, matmul(layer.b_factor.value, layer.a_factor.value));
    return layer;
}

/// h = W x + s * B * (A * x~), where x~ is the dropout-masked input in train
/// mode and x itself in eval mode. Eval is deterministic.
template <typename T>
Matrix<T> adapted_forward(const AdaptedLinear<T>& layer, const Matrix<T>& x, bool train_mode,
                          Rng* rng = nullptr) {
    if (x.rows() != layer.k()) {
        throw ShapeError("adapted_forward: input " + x.shape() + " does not match layer " +
                         std::to_string(layer.d()) + "x" + std::to_string(layer.k()));
    }
    Matrix<T> h = matmul(layer.base, x);
    Matrix<T> branch_in = x;
    if (train_mode && layer.dropout_p > 0) {
        if (rng == nullptr) {
            throw StateError("adapted_forward: train mode with dropout needs an RNG");
        }
        Matrix<T> mask = dropout_mask<T>(x.rows(), x.cols(), layer.dropout_p, *rng);
        for (size_t i = 0; i < branch_in.size(); ++i) branch_in.data()[i] *= mask.data()[i];
    }
    Matrix<T> low = matmul(layer.b_factor.value, matmul(layer.a_factor.value, branch_in));
    return scaled_add(h, layer.scale, low);
}

/// Collapses the adapter into a dense weight: W + s*B*A.
template <typename T>
Matrix<T> merge(const AdaptedLinear<T>& layer) {
    return scaled_add(layer.base, layer.scale, matmul(layer.b_factor.value, layer.a_factor.value));
}

/// Replaces the factor pair (task switching). The base weight is untouched;
/// the new pair may have a different rank but must match d and k.
template <typename T>
AdaptedLinear<T> swap_adapter(const AdaptedLinear<T>& layer, const Matrix<T>& new_b,
                              const Matrix<T>& new_a) {
    if (new_b.rows() != layer.d() || new_a.cols() != layer.k() || new_b.cols() != new_a.rows()) {
        throw ShapeError("swap_adapter: factors " + new_b.shape() + " x " + new_a.shape() +
                         " do not fit layer " + std::to_string(layer.d()) + "x" +
                         std::to_string(layer.k()));
    }
    AdaptedLinear<T> out = layer;
    out.b_factor = Param<T>(layer.b_factor.name, new_b);
    out.a_factor = Param<T>(layer.a_factor.name, new_a);
    return out;
}

/// Spectral diagnostic: both spectra plus how far B has left the orthonormal
/// manifold. The relationship between the two spectra is reported for
/// inspection, never asserted.
struct SpectralReport {
    std::vector<double> sigma_original;
    std::vector<double> sigma_update;     // singular values of B*A
    double orthonormality_drift = 0;      // ||B^T B - I||_F
};

template <typename T>
SpectralReport spectral_diagnose(const AdaptedLinear<T>& layer, const Matrix<T>& original_w) {
    if (std::max({layer.d(), layer.k(), original_w.rows(), original_w.cols()}) > kSvdMaxDim) {
        throw SizeError("spectral_diagnose limited to dimensions <= " +
                        std::to_string(kSvdMaxDim));
    }
    SpectralReport report;
    report.sigma_original = svd_values(original_w);
    report.sigma_update = svd_values(matmul(layer.b_factor.value, layer.a_factor.value));
    Matrix<T> gram = matmul_ex(layer.b_factor.value, layer.b_factor.value, true, false);
    for (int i = 0; i < gram.rows(); ++i) gram(i, i) -= T(1);
    report.orthonormality_drift = frobenius_norm(gram);
    return report;
}

}  // namespace olora
