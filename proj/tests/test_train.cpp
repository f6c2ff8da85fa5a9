// SPDX-License-Identifier: Apache-2.0
//
// Train-engine integration tests on a reduced model so the whole file runs
// in seconds. The full-size experiment lives in the acceptance suite.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "olora/train.hpp"

using namespace olora;

namespace {

ModelSpec small_spec() {
    ModelSpec spec;
    spec.vocab = 16;
    spec.embed = 16;
    spec.context = 4;
    spec.hidden = 24;
    return spec;
}

CorpusConfig small_corpus() {
    CorpusConfig cfg;
    cfg.train_sequences = 2048;
    cfg.eval_sequences = 256;
    return cfg;
}

PretrainSettings small_pretrain() {
    PretrainSettings ps;
    ps.steps = 300;
    ps.batch = 16;
    ps.lr = 3e-3;
    ps.eval_interval = 100;
    return ps;
}

TrainConfig small_train(Method m, int steps = 40) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.rank = 4;
    cfg.steps = steps;
    cfg.batch = 8;
    cfg.eval_interval = steps > 0 ? std::max(steps / 4, 1) : 10;
    cfg.seed = 3;
    return cfg;
}

struct Lab {
    MarkovSource source;
    MarkovSource shifted;
    TinyLM<float> base;
    Corpus shifted_corpus;
    RunMetrics pretrain_metrics;
};

// one shared pretrained base keeps the file fast
Lab& lab() {
    static Lab L = [] {
        Lab l;
        l.source = make_source(16, small_corpus().source_seed);
        l.shifted = shift_source(l.source, 0.5, small_corpus().shift_seed);
        l.base = pretrain<float>(small_spec(), l.source, small_corpus(), small_pretrain(),
                                 &l.pretrain_metrics);
        l.shifted_corpus = materialize_corpus(l.shifted, small_corpus(), 4, /*run_seed=*/3);
        return l;
    }();
    return L;
}

std::string strip_elapsed(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            out += line + "\n";
            header = false;
            continue;
        }
        // blank out the 4th column (elapsed_ms)
        size_t p1 = line.find(',');
        size_t p2 = line.find(',', p1 + 1);
        size_t p3 = line.find(',', p2 + 1);
        size_t p4 = line.find(',', p3 + 1);
        out += line.substr(0, p3 + 1) + "X" + line.substr(p4) + "\n";
    }
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("pretraining learns the source and is deterministic") {
    Lab& l = lab();
    const auto& recs = l.pretrain_metrics.records;
    REQUIRE(recs.size() > 2);
    const double step0 = recs.front().loss;
    const double final = recs.back().loss;
    CHECK(final < step0);
    CHECK(final <= entropy_floor(l.source, 4) + 0.3);

    // bit-identical checkpoint on a re-run with the same config
    auto again = pretrain<float>(small_spec(), l.source, small_corpus(), small_pretrain());
    const std::string b1 = serialize_checkpoint(model_to_checkpoint(l.base, small_corpus()));
    const std::string b2 = serialize_checkpoint(model_to_checkpoint(again, small_corpus()));
    CHECK(b1 == b2);
}

TEST_CASE("adapt with zero steps: one eval record, adapter equals its init") {
    Lab& l = lab();
    TrainConfig cfg = small_train(Method::olora, 0);
    auto result = adapt(l.base, cfg, l.shifted_corpus);

    REQUIRE(result.metrics.records.size() == 1);
    CHECK(result.metrics.records[0].step == 0);
    CHECK(result.metrics.records[0].split == Split::eval);

    // factors identical to a fresh attach with the same config
    auto fresh = l.base;
    attach_adapters(fresh, cfg.adapter());
    const std::string a = serialize_checkpoint(adapters_to_checkpoint(result.model, cfg.adapter()));
    const std::string b = serialize_checkpoint(adapters_to_checkpoint(fresh, cfg.adapter()));
    CHECK(a == b);
}

TEST_CASE("init identity: step-0 eval equals the frozen base model eval") {
    Lab& l = lab();
    const double base_eval = evaluate(l.base, l.shifted_corpus);
    for (Method m : {Method::lora, Method::olora}) {
        auto result = adapt(l.base, small_train(m, 0), l.shifted_corpus);
        CHECK(std::fabs(result.metrics.records[0].loss - base_eval) <= 1e-5);
    }
}

TEST_CASE("freeze contract: base tensors bitwise unchanged by adaptation") {
    Lab& l = lab();
    const std::string before = serialize_checkpoint(model_to_checkpoint(l.base, small_corpus()));
    auto result = adapt(l.base, small_train(Method::olora, 40), l.shifted_corpus);
    const std::string after_base =
        serialize_checkpoint(model_to_checkpoint(l.base, small_corpus()));
    CHECK(before == after_base);

    // the adapted copy's pre-trained tensors are also untouched
    const std::string adapted_base =
        serialize_checkpoint(model_to_checkpoint(result.model, small_corpus()));
    CHECK(before == adapted_base);

    // and training moved only the registered factors
    CHECK(registered_param_count(adapter_registry(result.model)) ==
          size_t(4 * (4 * (16 + 16)) + 4 * (24 + 16) + 4 * (16 + 24)));
}

TEST_CASE("training loss decreases and merge equivalence holds after training") {
    Lab& l = lab();
    auto result = adapt(l.base, small_train(Method::olora, 60), l.shifted_corpus);

    double early = 0, late = 0;
    int n_early = 0, n_late = 0;
    for (const auto& r : result.metrics.records) {
        if (r.split != Split::train) continue;
        if (r.step <= 10) {
            early += r.loss;
            ++n_early;
        }
        if (r.step > 50) {
            late += r.loss;
            ++n_late;
        }
    }
    REQUIRE(n_early > 0);
    REQUIRE(n_late > 0);
    CHECK(late / n_late < early / n_early);

    // merged dense weights reproduce the adapter path on fresh inputs
    auto merged = l.base;
    auto slots_src = result.model.slots();
    auto slots_dst = merged.slots();
    for (size_t i = 0; i < slots_src.size(); ++i) {
        slots_dst[i]->weight.value = merge(*slots_src[i]->adapter);
    }
    Rng rng(17, "probe");
    for (int trial = 0; trial < 4; ++trial) {
        TokenBatch b;
        b.batch = 4;
        b.context = 4;
        for (int i = 0; i < 16; ++i) b.tokens.push_back(int(rng.index(16)));
        CHECK(std::fabs(model_loss(merged, b) - model_loss(result.model, b)) <= 1e-5);
    }
}

TEST_CASE("metrics CSV: exact header, wrap-around batches, byte determinism") {
    Lab& l = lab();
    auto dir = std::filesystem::temp_directory_path() / "olora_train_test";
    std::filesystem::create_directories(dir);

    TrainConfig cfg = small_train(Method::lora, 20);
    auto r1 = adapt(l.base, cfg, l.shifted_corpus);
    auto r2 = adapt(l.base, cfg, l.shifted_corpus);
    const auto p1 = (dir / "m1.csv").string();
    const auto p2 = (dir / "m2.csv").string();
    write_metrics_csv(p1, r1.metrics);
    write_metrics_csv(p2, r2.metrics);

    const std::string c1 = slurp(p1), c2 = slurp(p2);
    CHECK(c1.substr(0, c1.find('\n')) == "step,split,loss,elapsed_ms,method,rank,scale,seed");
    CHECK(strip_elapsed(c1) == strip_elapsed(c2));

    // spot-check one data row's shape: 8 comma-separated fields
    std::istringstream in(c1);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
    CHECK(line.find("lora") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("compare: order independence, T=0 equality, fair streams") {
    Lab& l = lab();
    TrainConfig cfg = small_train(Method::olora, 20);
    std::vector<uint64_t> seeds{0, 1, 2};

    auto r1 = compare(l.base, l.shifted, small_corpus(), {Method::lora, Method::olora}, seeds, cfg);
    auto r2 = compare(l.base, l.shifted, small_corpus(), {Method::olora, Method::lora}, seeds, cfg);
    REQUIRE(r1.cells.size() == 6);
    CHECK(r1.win_count == r2.win_count);
    for (size_t i = 0; i < r1.cells.size(); ++i) {
        CHECK(r1.cells[i].method == r2.cells[i].method);
        CHECK(r1.cells[i].seed == r2.cells[i].seed);
        CHECK(r1.cells[i].quarter_loss == r2.cells[i].quarter_loss);
    }
    CHECK(r1.mean_eval_lora == r2.mean_eval_lora);
    CHECK(r1.mean_eval_olora == r2.mean_eval_olora);

    // identical batch streams per seed between methods
    for (size_t s = 0; s < seeds.size(); ++s) {
        CHECK(r1.cells[s].batch_stream_hash == r1.cells[3 + s].batch_stream_hash);
    }
    CHECK(r1.win_count >= 0);
    CHECK(r1.win_count <= 3);

    CHECK_THROWS_AS(
        compare(l.base, l.shifted, small_corpus(), {Method::lora, Method::olora}, {1, 2}, cfg),
        ConfigError);
}

TEST_CASE("compare with T=0: both methods sit at the base loss") {
    Lab& l = lab();
    TrainConfig cfg = small_train(Method::olora, 0);
    auto report =
        compare(l.base, l.shifted, small_corpus(), {Method::lora, Method::olora}, {0, 1, 2}, cfg);
    REQUIRE(report.eval_steps.size() == 1);
    for (size_t s = 0; s < 3; ++s) {
        CHECK(std::fabs(report.cells[s].quarter_loss - report.cells[3 + s].quarter_loss) <= 1e-5);
    }
    CHECK(report.win_count == 0);  // strict inequality never holds at T=0
}

TEST_CASE("divergence is reported as a run error naming the last finite step") {
    Lab& l = lab();
    TrainConfig cfg = small_train(Method::olora, 8);
    cfg.lr = 1e8;  // forces overflow within a few steps
    cfg.eval_interval = 4;
    CHECK_THROWS_AS(adapt(l.base, cfg, l.shifted_corpus), RunError);
}

TEST_CASE("parallel compare equals sequential compare") {
    Lab& l = lab();
    TrainConfig cfg = small_train(Method::olora, 20);
    auto seq = compare(l.base, l.shifted, small_corpus(), {Method::lora, Method::olora}, {0, 1, 2},
                       cfg, /*jobs=*/1);
    auto par = compare(l.base, l.shifted, small_corpus(), {Method::lora, Method::olora}, {0, 1, 2},
                       cfg, /*jobs=*/3);
    REQUIRE(seq.cells.size() == par.cells.size());
    for (size_t i = 0; i < seq.cells.size(); ++i) {
        CHECK(seq.cells[i].quarter_loss == par.cells[i].quarter_loss);
        CHECK(seq.cells[i].final_loss == par.cells[i].final_loss);
    }
}

TEST_CASE("qr overhead report: positive times, ratio falls with the horizon") {
    ModelSpec spec = small_spec();
    auto source = make_source(spec.vocab, 5);
    TrainConfig cfg = small_train(Method::olora, 100);
    cfg.steps = 100;
    auto r100 = qr_overhead_report<float>(spec, cfg, source);
    cfg.steps = 1000;
    auto r1000 = qr_overhead_report<float>(spec, cfg, source);

    CHECK(r100.init_ms > 0.0);
    CHECK(r100.per_step_ms > 0.0);
    CHECK(r1000.ratio < r100.ratio);
    CHECK(r1000.ratio < 0.05);

    cfg.steps = 50;
    CHECK_THROWS_AS(qr_overhead_report<float>(spec, cfg, source), ConfigError);
}

TEST_CASE("adapter checkpoints round trip through files and reload into a model") {
    Lab& l = lab();
    auto dir = std::filesystem::temp_directory_path() / "olora_train_ckpt";
    std::filesystem::create_directories(dir);
    TrainConfig cfg = small_train(Method::olora, 32);
    auto result = adapt(l.base, cfg, l.shifted_corpus);

    const auto base_path = (dir / "base.olrc").string();
    const auto adapter_path = (dir / "adapter.olrc").string();
    write_checkpoint(base_path, model_to_checkpoint(l.base, small_corpus()));
    write_checkpoint(adapter_path, adapters_to_checkpoint(result.model, cfg.adapter()));

    auto base_ckpt = read_checkpoint(base_path);
    auto model = model_from_checkpoint<float>(base_ckpt);
    load_adapters(model, read_checkpoint(adapter_path));

    const double orig = evaluate(result.model, l.shifted_corpus);
    const double loaded = evaluate(model, l.shifted_corpus);
    CHECK(orig == loaded);  // bit-identical state must give bit-identical loss

    auto corpus_echo = corpus_from_checkpoint(base_ckpt);
    CHECK(corpus_echo.source_seed == small_corpus().source_seed);
    CHECK(corpus_echo.shift == small_corpus().shift);
    std::filesystem::remove_all(dir);
}
