// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace olora {

// Error taxonomy. Each maps to a CLI exit code in tools/main.cpp:
// config/usage -> 2, runtime/IO -> 3, verification -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct RankError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct SizeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct RunError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct CorruptionError : Error { using Error::Error; };
struct TruncationError : Error { using Error::Error; };

enum class Method : uint8_t { lora = 0, olora = 1 };
enum class Nonlinearity : uint8_t { relu = 0, gelu = 1 };
enum class Split : uint8_t { train = 0, eval = 1 };

inline std::string to_string(Method m) { return m == Method::lora ? "lora" : "olora"; }
inline std::string to_string(Nonlinearity n) { return n == Nonlinearity::relu ? "relu" : "gelu"; }
inline std::string to_string(Split s) { return s == Split::train ? "train" : "eval"; }

inline Method parse_method(std::string_view s) {
    if (s == "lora") return Method::lora;
    if (s == "olora") return Method::olora;
    throw ConfigError("unknown method '" + std::string(s) + "' (expected lora|olora)");
}

inline Nonlinearity parse_nonlinearity(std::string_view s) {
    if (s == "relu") return Nonlinearity::relu;
    if (s == "gelu") return Nonlinearity::gelu;
    throw ConfigError("unknown nonlinearity '" + std::string(s) + "' (expected relu|gelu)");
}

namespace detail {

// little-endian byte packing shared by the binary file formats
inline void put_u16(std::string& buf, uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

}  // namespace detail

// FNV-1a, used for batch-stream and model-spec fingerprints.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

}  // namespace olora
