// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <zlib.h>

#include <filesystem>
#include <fstream>

#include "olora/persist.hpp"
#include "olora/rng.hpp"

using namespace olora;

namespace {

std::filesystem::path test_dir() {
    auto dir = std::filesystem::temp_directory_path() / "olora_persist_test";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), std::streamsize(buf.size()));
}

}  // namespace

TEST_CASE("crc32 matches the zlib oracle") {
    Rng rng(2, "crc");
    for (int len : {0, 1, 7, 256, 4099}) {
        std::vector<uint8_t> buf(static_cast<size_t>(len));
        for (auto& b : buf) b = uint8_t(rng.index(256));
        const uint32_t ours = crc32_ieee(buf.data(), buf.size());
        const uint32_t theirs =
            uint32_t(::crc32(::crc32(0L, Z_NULL, 0), buf.data(), uInt(buf.size())));
        CHECK(ours == theirs);
    }
}

TEST_CASE("empty checkpoint is 13 header bytes plus 4 crc bytes") {
    const auto path = (test_dir() / "empty.olrc").string();
    Checkpoint ckpt;
    write_checkpoint(path, ckpt);
    CHECK(std::filesystem::file_size(path) == 17);
    auto back = read_checkpoint(path);
    CHECK(back.records.empty());
    CHECK(back.role == CkptRole::base);
}

TEST_CASE("1x1 f32 tensor named w gives a 41-byte file") {
    const auto path = (test_dir() / "tiny.olrc").string();
    Checkpoint ckpt;
    Matrix<float> m(1, 1);
    m(0, 0) = 2.5f;
    ckpt.records.push_back(make_record("w", m));
    write_checkpoint(path, ckpt);
    CHECK(std::filesystem::file_size(path) == 41);
}

TEST_CASE("round trip preserves tensors bitwise and record order") {
    const auto path = (test_dir() / "round.olrc").string();
    Rng rng(5, "round");
    Checkpoint ckpt;
    ckpt.role = CkptRole::adapter;
    ckpt.records.push_back(make_record("b/1", random_uniform<float>(8, 3, -1, 1, rng)));
    ckpt.records.push_back(make_record("a/1", random_uniform<double>(3, 9, -1, 1, rng)));
    ckpt.add_meta("meta/rank", 3.0);
    write_checkpoint(path, ckpt);

    auto back = read_checkpoint(path);
    CHECK(back.role == CkptRole::adapter);
    REQUIRE(back.records.size() == 3);
    CHECK(back.records[0].name == "b/1");
    CHECK(back.records[1].name == "a/1");
    CHECK(back.records[2].name == "meta/rank");
    CHECK(back.records[0].f32 == ckpt.records[0].f32);
    CHECK(back.records[1].f64 == ckpt.records[1].f64);
    CHECK(back.meta("meta/rank") == 3.0);

    CHECK(bitwise_equal(record_to_matrix<float>(back.records[0]),
                        record_to_matrix<float>(ckpt.records[0])));
    CHECK_THROWS_AS(record_to_matrix<double>(back.records[0]), FormatError);
}

TEST_CASE("single corrupted payload byte is a corruption error, not silent data") {
    const auto path = (test_dir() / "corrupt.olrc").string();
    Rng rng(6, "corrupt");
    Checkpoint ckpt;
    ckpt.records.push_back(make_record("w", random_uniform<float>(4, 4, -1, 1, rng)));
    write_checkpoint(path, ckpt);

    std::string buf = slurp(path);
    buf[30] = char(uint8_t(buf[30]) ^ 0x10);  // flip one payload bit
    spit(path, buf);
    CHECK_THROWS_AS(read_checkpoint(path), CorruptionError);
}

TEST_CASE("bad magic and unknown version are format errors") {
    const auto path = (test_dir() / "magic.olrc").string();
    Checkpoint ckpt;
    write_checkpoint(path, ckpt);

    std::string good = slurp(path);
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    spit(path + ".m", bad_magic);
    CHECK_THROWS_AS(read_checkpoint(path + ".m"), FormatError);

    // version 2 with a freshly valid crc (as a hypothetical v2 writer would)
    std::string v2 = good.substr(0, good.size() - 4);
    v2[4] = 2;
    const uint32_t crc = crc32_ieee(v2.data(), v2.size());
    for (int i = 0; i < 4; ++i) v2.push_back(char((crc >> (8 * i)) & 0xff));
    spit(path + ".v2", v2);
    CHECK_THROWS_WITH(read_checkpoint(path + ".v2"),
                      Catch::Matchers::ContainsSubstring("version 2"));
}

TEST_CASE("truncated files are reported as truncation") {
    const auto path = (test_dir() / "trunc.olrc").string();
    Rng rng(7, "trunc");
    Checkpoint ckpt;
    ckpt.records.push_back(make_record("w", random_uniform<float>(6, 6, -1, 1, rng)));
    write_checkpoint(path, ckpt);

    std::string buf = slurp(path);
    spit(path + ".t", buf.substr(0, 10));  // shorter than header+crc
    CHECK_THROWS_AS(read_checkpoint(path + ".t"), TruncationError);

    // cut inside a record payload but keep a valid crc over the prefix
    std::string cut = buf.substr(0, 40);
    const uint32_t crc = crc32_ieee(cut.data(), cut.size());
    for (int i = 0; i < 4; ++i) cut.push_back(char((crc >> (8 * i)) & 0xff));
    spit(path + ".t2", cut);
    CHECK_THROWS_AS(read_checkpoint(path + ".t2"), TruncationError);
}

TEST_CASE("writing rejects non-finite tensors") {
    Checkpoint ckpt;
    Matrix<float> m(2, 2);
    m(0, 1) = std::numeric_limits<float>::infinity();
    ckpt.records.push_back(make_record("w", m));
    CHECK_THROWS_AS(write_checkpoint((test_dir() / "nf.olrc").string(), ckpt), NumericError);
}

TEST_CASE("payload bytes scale linearly with rank for factor pairs") {
    auto adapter_file_size = [&](int rank) {
        Checkpoint ckpt;
        ckpt.role = CkptRole::adapter;
        Rng rng(uint64_t(rank), "sz");
        for (const char* layer : {"wq", "wk", "wv", "wo"}) {
            ckpt.records.push_back(
                make_record(std::string(layer) + "/B", random_uniform<float>(32, rank, -1, 1, rng)));
            ckpt.records.push_back(
                make_record(std::string(layer) + "/A", random_uniform<float>(rank, 32, -1, 1, rng)));
        }
        const auto path = (test_dir() / ("sz" + std::to_string(rank) + ".olrc")).string();
        write_checkpoint(path, ckpt);
        return std::filesystem::file_size(path);
    };
    const auto s4 = adapter_file_size(4);
    const auto s16 = adapter_file_size(16);
    // fixed overhead aside, payload is 4 layers * r*(32+32) floats
    CHECK(s16 - s4 == 4u * (16 - 4) * (32 + 32) * sizeof(float));
    std::filesystem::remove_all(test_dir());
}
