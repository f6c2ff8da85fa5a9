// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "olora/matrix.hpp"

namespace olora {

// Checkpoint file layout (all integers little-endian):
//
//   magic   "OLRC"                          4 bytes
//   version u32 = 1                         4 bytes
//   role    u8  (0 = base, 1 = adapter)     1 byte
//   count   u32                             4 bytes
//   count records:
//     name length  u16
//     name         UTF-8 bytes
//     dtype        u8 (0 = f32, 1 = f64)
//     rows         u64
//     cols         u64
//     payload      rows*cols scalars, row-major
//   crc32 of everything above               4 bytes
//
// Files are written to a temp path and renamed, so readers never observe a
// partially written checkpoint.

enum class CkptRole : uint8_t { base = 0, adapter = 1 };
enum class DType : uint8_t { f32 = 0, f64 = 1 };

inline uint32_t crc32_ieee(const void* data, size_t len, uint32_t crc = 0) {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const uint8_t*>(data);
    crc = ~crc;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return ~crc;
}

struct TensorRecord {
    std::string name;
    DType dtype = DType::f32;
    uint64_t rows = 0;
    uint64_t cols = 0;
    std::vector<float> f32;
    std::vector<double> f64;

    size_t count() const { return size_t(rows) * size_t(cols); }
};

template <typename T>
TensorRecord make_record(std::string name, const Matrix<T>& m) {
    TensorRecord rec;
    rec.name = std::move(name);
    rec.rows = uint64_t(m.rows());
    rec.cols = uint64_t(m.cols());
    if constexpr (std::is_same_v<T, float>) {
        rec.dtype = DType::f32;
        rec.f32.assign(m.data(), m.data() + m.size());
    } else {
        rec.dtype = DType::f64;
        rec.f64.assign(m.data(), m.data() + m.size());
    }
    return rec;
}

template <typename T>
Matrix<T> record_to_matrix(const TensorRecord& rec) {
    const DType want = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    if (rec.dtype != want) {
        throw FormatError("tensor '" + rec.name + "' stored as " +
                          (rec.dtype == DType::f32 ? "f32" : "f64") + ", expected the other");
    }
    Matrix<T> m(int(rec.rows), int(rec.cols));
    if constexpr (std::is_same_v<T, float>) {
        std::memcpy(m.data(), rec.f32.data(), rec.f32.size() * sizeof(float));
    } else {
        std::memcpy(m.data(), rec.f64.data(), rec.f64.size() * sizeof(double));
    }
    return m;
}

struct Checkpoint {
    uint32_t version = 1;
    CkptRole role = CkptRole::base;
    std::vector<TensorRecord> records;

    const TensorRecord* find(const std::string& name) const {
        for (const auto& r : records) {
            if (r.name == name) return &r;
        }
        return nullptr;
    }

    const TensorRecord& require(const std::string& name) const {
        const TensorRecord* r = find(name);
        if (!r) throw FormatError("checkpoint record '" + name + "' missing");
        return *r;
    }

    // 1x1 f64 records carry scalar metadata (config echo).
    void add_meta(const std::string& name, double value) {
        Matrix<double> m(1, 1);
        m(0, 0) = value;
        records.push_back(make_record(name, m));
    }
    double meta(const std::string& name) const {
        const TensorRecord& r = require(name);
        if (r.dtype != DType::f64 || r.count() != 1) {
            throw FormatError("checkpoint record '" + name + "' is not scalar metadata");
        }
        return r.f64[0];
    }
};

namespace detail {

struct Cursor {
    const uint8_t* p;
    size_t len;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > len) throw TruncationError("checkpoint truncated mid-record");
    }
    uint8_t u8() {
        need(1);
        return p[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = uint16_t(p[pos]) | uint16_t(p[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[pos + size_t(i)];
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[pos + size_t(i)];
        pos += 8;
        return v;
    }
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string buf;
    buf += "OLRC";
    detail::put_u32(buf, ckpt.version);
    buf.push_back(char(uint8_t(ckpt.role)));
    detail::put_u32(buf, uint32_t(ckpt.records.size()));
    for (const TensorRecord& rec : ckpt.records) {
        if (rec.name.size() > 0xffff) throw FormatError("record name too long");
        detail::put_u16(buf, uint16_t(rec.name.size()));
        buf += rec.name;
        buf.push_back(char(uint8_t(rec.dtype)));
        detail::put_u64(buf, rec.rows);
        detail::put_u64(buf, rec.cols);
        if (rec.dtype == DType::f32) {
            for (float v : rec.f32) detail::put_u32(buf, std::bit_cast<uint32_t>(v));
        } else {
            for (double v : rec.f64) detail::put_u64(buf, std::bit_cast<uint64_t>(v));
        }
    }
    detail::put_u32(buf, crc32_ieee(buf.data(), buf.size()));
    return buf;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    for (const TensorRecord& rec : ckpt.records) {
        if (rec.count() != (rec.dtype == DType::f32 ? rec.f32.size() : rec.f64.size())) {
            throw FormatError("record '" + rec.name + "' payload does not match its shape");
        }
        const bool finite =
            rec.dtype == DType::f32
                ? std::all_of(rec.f32.begin(), rec.f32.end(),
                              [](float v) { return std::isfinite(double(v)); })
                : std::all_of(rec.f64.begin(), rec.f64.end(),
                              [](double v) { return std::isfinite(v); });
        if (!finite) throw NumericError("record '" + rec.name + "' has non-finite entries");
    }
    const std::string buf = serialize_checkpoint(ckpt);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out || !out.write(buf.data(), std::streamsize(buf.size()))) {
            throw IoError("cannot write checkpoint: " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + path + " (" + ec.message() + ")");
}

inline Checkpoint parse_checkpoint(const uint8_t* data, size_t len) {
    if (len < 17) throw TruncationError("checkpoint shorter than header + crc");
    if (std::memcmp(data, "OLRC", 4) != 0) throw FormatError("checkpoint magic mismatch");
    const uint32_t stored_crc = uint32_t(data[len - 4]) | uint32_t(data[len - 3]) << 8 |
                                uint32_t(data[len - 2]) << 16 | uint32_t(data[len - 1]) << 24;
    if (crc32_ieee(data, len - 4) != stored_crc) {
        throw CorruptionError("checkpoint crc mismatch");
    }

    detail::Cursor cur{data, len - 4, 4};
    Checkpoint ckpt;
    ckpt.version = cur.u32();
    if (ckpt.version != 1) {
        throw FormatError("checkpoint version " + std::to_string(ckpt.version) + " not supported");
    }
    const uint8_t role = cur.u8();
    if (role > 1) throw FormatError("checkpoint role byte " + std::to_string(role) + " invalid");
    ckpt.role = CkptRole(role);
    const uint32_t count = cur.u32();
    ckpt.records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        TensorRecord rec;
        const uint16_t name_len = cur.u16();
        cur.need(name_len);
        rec.name.assign(reinterpret_cast<const char*>(data) + cur.pos, name_len);
        cur.pos += name_len;
        const uint8_t dtype = cur.u8();
        if (dtype > 1) throw FormatError("record '" + rec.name + "' dtype byte invalid");
        rec.dtype = DType(dtype);
        rec.rows = cur.u64();
        rec.cols = cur.u64();
        const size_t n = rec.count();
        if (rec.dtype == DType::f32) {
            rec.f32.resize(n);
            for (size_t j = 0; j < n; ++j) rec.f32[j] = std::bit_cast<float>(cur.u32());
        } else {
            rec.f64.resize(n);
            for (size_t j = 0; j < n; ++j) rec.f64[j] = std::bit_cast<double>(cur.u64());
        }
        ckpt.records.push_back(std::move(rec));
    }
    if (cur.pos != len - 4) throw FormatError("checkpoint has trailing bytes after records");
    return ckpt;
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(reinterpret_cast<const uint8_t*>(buf.data()), buf.size());
}

}  // namespace olora
