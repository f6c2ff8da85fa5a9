// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "olora/common.hpp"
#include "olora/rng.hpp"

namespace olora {

/// First-order Markov chain over token ids. Rows of the transition matrix
/// are probability distributions; the conditional entropy gives a closed-form
/// floor on achievable next-token loss, which real-text corpora cannot.
struct MarkovSource {
    int vocab = 0;
    uint64_t seed = 0;
    std::vector<double> transition;  // vocab x vocab, row-major
    std::vector<double> row_cdf;     // cumulative rows, for inverse-CDF sampling

    double prob(int from, int to) const { return transition[size_t(from) * vocab + to]; }

    void rebuild_cdf() {
        row_cdf.assign(transition.size(), 0.0);
        for (int i = 0; i < vocab; ++i) {
            double acc = 0;
            for (int j = 0; j < vocab; ++j) {
                acc += prob(i, j);
                row_cdf[size_t(i) * vocab + j] = acc;
            }
        }
    }
};

/// Rows are normalized i.i.d. exponential draws (symmetric Dirichlet(1)).
inline MarkovSource make_source(int vocab, uint64_t seed) {
    if (vocab < 2) throw ConfigError("markov source needs vocab >= 2");
    MarkovSource src;
    src.vocab = vocab;
    src.seed = seed;
    src.transition.resize(size_t(vocab) * vocab);
    Rng rng(seed, "markov-rows");
    for (int i = 0; i < vocab; ++i) {
        double sum = 0;
        for (int j = 0; j < vocab; ++j) {
            double e = rng.exponential();
            src.transition[size_t(i) * vocab + j] = e;
            sum += e;
        }
        for (int j = 0; j < vocab; ++j) src.transition[size_t(i) * vocab + j] /= sum;
    }
    src.rebuild_cdf();
    return src;
}

/// Convex mixture toward an independent fresh source: (1-delta)*old + delta*fresh.
/// delta=0 returns the input unchanged; delta=1 returns the fresh source.
inline MarkovSource shift_source(const MarkovSource& src, double delta, uint64_t seed) {
    if (delta < 0 || delta > 1) throw ConfigError("shift strength must be in [0, 1]");
    if (delta == 0.0) return src;
    MarkovSource fresh = make_source(src.vocab, seed);
    if (delta == 1.0) return fresh;
    MarkovSource out;
    out.vocab = src.vocab;
    out.seed = seed;
    out.transition.resize(src.transition.size());
    for (size_t i = 0; i < src.transition.size(); ++i) {
        out.transition[i] = (1.0 - delta) * src.transition[i] + delta * fresh.transition[i];
    }
    // renormalize rows; mixtures of unit rows are within rounding of 1 already
    for (int i = 0; i < out.vocab; ++i) {
        double sum = 0;
        for (int j = 0; j < out.vocab; ++j) sum += out.transition[size_t(i) * out.vocab + j];
        for (int j = 0; j < out.vocab; ++j) out.transition[size_t(i) * out.vocab + j] /= sum;
    }
    out.rebuild_cdf();
    return out;
}

/// Markov rollout from a uniform initial state. Advancing the stream RNG
/// across calls yields non-overlapping, reproducible batches.
inline std::vector<int> sample_tokens(const MarkovSource& src, int sequences, int length,
                                      Rng& stream) {
    std::vector<int> out;
    out.reserve(size_t(sequences) * length);
    for (int s = 0; s < sequences; ++s) {
        int state = int(stream.index(uint64_t(src.vocab)));
        out.push_back(state);
        for (int t = 1; t < length; ++t) {
            const double u = stream.uniform();
            const double* cdf = src.row_cdf.data() + size_t(state) * src.vocab;
            state = int(std::upper_bound(cdf, cdf + src.vocab, u) - cdf);
            if (state >= src.vocab) state = src.vocab - 1;
            out.push_back(state);
        }
    }
    return out;
}

/// Bayes-optimal mean next-token loss for rollouts of the given length:
/// positions t = 0..length-2 are scored, and the state distribution at
/// position t is uniform * P^t, so the floor is the average conditional
/// entropy under those occupancies.
inline double entropy_floor(const MarkovSource& src, int length) {
    if (length < 2) throw ConfigError("entropy_floor needs length >= 2");
    const int v = src.vocab;
    std::vector<double> row_entropy(v, 0.0);
    for (int i = 0; i < v; ++i) {
        double h = 0;
        for (int j = 0; j < v; ++j) {
            const double p = src.prob(i, j);
            if (p > 0) h -= p * std::log(p);
        }
        row_entropy[size_t(i)] = h;
    }
    std::vector<double> mu(v, 1.0 / v), next(v);
    double total = 0;
    for (int t = 0; t + 1 < length; ++t) {
        double step_loss = 0;
        for (int i = 0; i < v; ++i) step_loss += mu[size_t(i)] * row_entropy[size_t(i)];
        total += step_loss;
        std::fill(next.begin(), next.end(), 0.0);
        for (int i = 0; i < v; ++i) {
            for (int j = 0; j < v; ++j) next[size_t(j)] += mu[size_t(i)] * src.prob(i, j);
        }
        mu.swap(next);
    }
    return total / (length - 1);
}

// --- token dump format: "OLTK", version u32 LE, vocab u32, count u64,
// --- then u16 little-endian token ids.

inline void write_tokens(const std::string& path, int vocab, const std::vector<int>& tokens) {
    if (vocab < 2 || vocab > 0xffff) throw ConfigError("token dump vocab must fit u16");
    std::string buf;
    buf += "OLTK";
    detail::put_u32(buf, 1);
    detail::put_u32(buf, uint32_t(vocab));
    detail::put_u64(buf, uint64_t(tokens.size()));
    for (int t : tokens) {
        if (t < 0 || t >= vocab) {
            throw DataError("token " + std::to_string(t) + " out of range for dump");
        }
        buf.push_back(char(t & 0xff));
        buf.push_back(char((t >> 8) & 0xff));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(buf.data(), std::streamsize(buf.size()))) {
        throw IoError("cannot write token dump: " + path);
    }
}

inline std::vector<int> read_tokens(const std::string& path, int* vocab_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open token dump: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 20) throw TruncationError("token dump shorter than its header");
    if (buf.compare(0, 4, "OLTK") != 0) throw FormatError("token dump magic mismatch");
    auto u32_at = [&](size_t off) {
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | uint8_t(buf[off + size_t(i)]);
        return v;
    };
    auto u64_at = [&](size_t off) {
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | uint8_t(buf[off + size_t(i)]);
        return v;
    };
    const uint32_t version = u32_at(4);
    if (version != 1) {
        throw FormatError("token dump version " + std::to_string(version) + " not supported");
    }
    const uint32_t vocab = u32_at(8);
    const uint64_t count = u64_at(12);
    if (buf.size() != 20 + count * 2) throw TruncationError("token dump length mismatch");
    std::vector<int> tokens(count);
    for (uint64_t i = 0; i < count; ++i) {
        const int t = uint8_t(buf[20 + 2 * i]) | (uint8_t(buf[20 + 2 * i + 1]) << 8);
        if (t >= int(vocab)) throw DataError("token dump entry out of range");
        tokens[i] = t;
    }
    if (vocab_out) *vocab_out = int(vocab);
    return tokens;
}

}  // namespace olora
