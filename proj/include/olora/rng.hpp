// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "olora/common.hpp"

namespace olora {

// splitmix64 step, used to derive independent stream seeds from (seed, tag).
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view stream_tag) {
    return mix64(seed ^ mix64(fnv1a64(stream_tag)));
}

// Deterministic PRNG. The engine (std::mt19937_64) has standard-specified
// output; all real-valued mappings are done here rather than through
// std::*_distribution, whose results vary across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(mix64(seed)) {}
    Rng(uint64_t seed, std::string_view stream_tag) : engine_(derive_seed(seed, stream_tag)) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is < n/2^64, irrelevant here.
    uint64_t index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    double exponential() {
        double u = uniform();
        return -std::log1p(-u);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace olora
