// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "olora/checkpoint_io.hpp"
#include "olora/data.hpp"
#include "olora/model.hpp"
#include "olora/optim.hpp"

namespace olora {

struct TrainConfig {
    Method method = Method::olora;
    int rank = 8;
    double alpha = 16.0;
    std::optional<double> scale;  // unset -> alpha/rank
    double lr = 3e-4;
    double weight_decay = 0.1;
    double dropout = 0.05;
    int steps = 2000;
    int batch = 16;
    int eval_interval = 100;
    int eval_batches = 0;  // 0 -> evaluate on the whole eval set
    uint64_t seed = 1;
    int precision = 32;

    double effective_scale() const { return scale.has_value() ? *scale : alpha / rank; }

    AdapterConfig adapter() const {
        AdapterConfig cfg;
        cfg.method = method;
        cfg.rank = rank;
        cfg.alpha = alpha;
        cfg.scale = scale;
        cfg.dropout = dropout;
        cfg.seed = seed;
        return cfg;
    }

    void validate() const {
        adapter().validate();
        if (steps < 0) throw ConfigError("train.steps must be >= 0");
        if (batch < 1) throw ConfigError("train.batch must be >= 1");
        if (eval_interval < 1) throw ConfigError("train.eval_interval must be >= 1");
        if (eval_batches < 0) throw ConfigError("train.eval_batches must be >= 0");
        if (steps > 0 && steps % eval_interval != 0) {
            throw ConfigError("train.eval_interval must divide train.steps");
        }
        if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
    }
};

struct MetricRecord {
    int64_t step = 0;
    Split split = Split::train;
    double loss = 0;
    double elapsed_ms = 0;
};

struct RunMetrics {
    Method method = Method::olora;
    int rank = 0;
    double scale = 0;
    uint64_t seed = 0;
    uint64_t spec_hash = 0;
    double init_ms = 0;
    uint64_t batch_stream_hash = 0;
    std::vector<MetricRecord> records;

    const MetricRecord* eval_at(int64_t step) const {
        for (const auto& r : records) {
            if (r.split == Split::eval && r.step == step) return &r;
        }
        return nullptr;
    }
};

/// Metrics CSV contract: exactly these columns in this order, one header
/// row, floats printed with 9 significant digits, newline separators.
inline void write_metrics_csv(const std::string& path, const RunMetrics& m) {
    std::string out = "step,split,loss,elapsed_ms,method,rank,scale,seed\n";
    char buf[256];
    for (const MetricRecord& r : m.records) {
        std::snprintf(buf, sizeof(buf), "%lld,%s,%.9g,%.9g,%s,%d,%.9g,%llu\n",
                      static_cast<long long>(r.step), to_string(r.split).c_str(), r.loss,
                      r.elapsed_ms, to_string(m.method).c_str(), m.rank, m.scale,
                      static_cast<unsigned long long>(m.seed));
        out += buf;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f || !f.write(out.data(), std::streamsize(out.size()))) {
        throw IoError("cannot write metrics csv: " + path);
    }
}

/// Reified corpus: the training set is a fixed array of sequences consumed
/// in order with wraparound (single-epoch semantics when steps*batch equals
/// train_sequences); the eval set is fixed and shared by every run of the
/// same corpus config, so trajectories are comparable across methods/seeds.
struct Corpus {
    int vocab = 0;
    int context = 0;
    int train_sequences = 0;
    int eval_sequences = 0;
    std::vector<int> train_tokens;
    std::vector<int> eval_tokens;

    uint64_t stream_hash() const {
        return fnv1a64(train_tokens.data(), train_tokens.size() * sizeof(int));
    }
};

inline Corpus materialize_corpus(const MarkovSource& source, const CorpusConfig& cfg, int context,
                                 uint64_t run_seed) {
    cfg.validate();
    Corpus corpus;
    corpus.vocab = source.vocab;
    corpus.context = cfg.sequence_length > 0 ? cfg.sequence_length : context;
    corpus.train_sequences = cfg.train_sequences;
    corpus.eval_sequences = cfg.eval_sequences;
    Rng train_stream(mix64(run_seed) ^ source.seed, "train-stream");
    corpus.train_tokens = sample_tokens(source, cfg.train_sequences, corpus.context, train_stream);
    Rng eval_stream(source.seed, "eval-stream");  // shared across runs
    corpus.eval_tokens = sample_tokens(source, cfg.eval_sequences, corpus.context, eval_stream);
    return corpus;
}

inline TokenBatch train_batch(const Corpus& corpus, int batch_size, int64_t step) {
    TokenBatch b;
    b.batch = batch_size;
    b.context = corpus.context;
    b.tokens.reserve(size_t(batch_size) * corpus.context);
    const int64_t n = corpus.train_sequences;
    for (int i = 0; i < batch_size; ++i) {
        const int64_t s = (step * batch_size + i) % n;
        const int* seq = corpus.train_tokens.data() + size_t(s) * corpus.context;
        b.tokens.insert(b.tokens.end(), seq, seq + corpus.context);
    }
    return b;
}

template <typename T>
double evaluate(TinyLM<T>& model, const Corpus& corpus, int max_sequences = 0, int chunk = 64) {
    const int total = max_sequences > 0 ? std::min(max_sequences, corpus.eval_sequences)
                                        : corpus.eval_sequences;
    double weighted = 0;
    int done = 0;
    while (done < total) {
        const int n = std::min(chunk, total - done);
        TokenBatch b;
        b.batch = n;
        b.context = corpus.context;
        b.tokens.assign(corpus.eval_tokens.begin() + size_t(done) * corpus.context,
                        corpus.eval_tokens.begin() + size_t(done + n) * corpus.context);
        weighted += model_loss(model, b) * n;
        done += n;
    }
    return weighted / total;
}

template <typename T>
double train_step(TinyLM<T>& model, AdamW<T>& opt, const TokenBatch& batch, Rng& dropout_rng) {
    opt.zero_grad();
    Tape<T> tape;
    DropoutPlan<T> plan;
    plan.rng = &dropout_rng;
    const int loss = build_loss(tape, model, batch, /*train=*/true, plan);
    const double value = double(tape.loss_value(loss));
    tape.backward(loss);
    opt.step();
    return value;
}

struct PretrainSettings {
    int steps = 2000;
    int batch = 16;
    double lr = 1e-3;
    double weight_decay = 0.0;
    int eval_interval = 200;
    uint64_t seed = 7;

    void validate() const {
        if (steps < 1) throw ConfigError("pretrain.steps must be >= 1");
        if (batch < 1) throw ConfigError("pretrain.batch must be >= 1");
        if (eval_interval < 1) throw ConfigError("pretrain.eval_interval must be >= 1");
    }
};

/// Full-parameter training on the source distribution. Produces the
/// stand-in pre-trained model; fails if the model did not actually learn
/// (final eval loss must land within 0.3 of the source's entropy floor).
template <typename T>
TinyLM<T> pretrain(const ModelSpec& spec, const MarkovSource& source, const CorpusConfig& corpus_cfg,
                   const PretrainSettings& settings, RunMetrics* metrics_out = nullptr) {
    spec.validate();
    settings.validate();
    TinyLM<T> model = init_model<T>(spec, settings.seed);
    Corpus corpus = materialize_corpus(source, corpus_cfg, spec.context, settings.seed);

    typename AdamW<T>::Options opt;
    opt.lr = settings.lr;
    opt.weight_decay = settings.weight_decay;
    AdamW<T> adamw(model.base_params(), opt);
    Rng dropout_rng(settings.seed, "pretrain-dropout");  // unused: no adapters

    RunMetrics metrics;
    metrics.method = Method::lora;  // not meaningful for pretraining
    metrics.rank = 0;
    metrics.scale = 0;
    metrics.seed = settings.seed;
    metrics.spec_hash = spec.hash();
    metrics.batch_stream_hash = corpus.stream_hash();
    const auto start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    };

    const double step0_eval = evaluate(model, corpus);
    metrics.records.push_back({0, Split::eval, step0_eval, elapsed_ms()});
    double final_eval = step0_eval;
    try {
        for (int64_t t = 1; t <= settings.steps; ++t) {
            const double loss = train_step(model, adamw, train_batch(corpus, settings.batch, t - 1),
                                           dropout_rng);
            metrics.records.push_back({t, Split::train, loss, elapsed_ms()});
            if (t % settings.eval_interval == 0 || t == settings.steps) {
                final_eval = evaluate(model, corpus);
                metrics.records.push_back({t, Split::eval, final_eval, elapsed_ms()});
            }
        }
    } catch (const NumericError& e) {
        throw RunError(std::string("pretraining diverged: ") + e.what());
    }

    const double floor = entropy_floor(source, corpus.context);
    if (final_eval > floor + 0.3) {
        throw RunError("pretraining did not converge: eval loss " + std::to_string(final_eval) +
                       " vs entropy floor " + std::to_string(floor));
    }
    if (final_eval < floor - 0.05) {
        throw RunError("eval loss " + std::to_string(final_eval) +
                       " below the entropy floor: data pipeline inconsistent");
    }
    if (metrics_out) *metrics_out = std::move(metrics);
    return model;
}

template <typename T>
struct AdaptResult {
    TinyLM<T> model;  // adapted model; adapter_registry() re-derives params
    RunMetrics metrics;
};

/// Algorithm: freeze the base, attach adapters per config, train only the
/// factors, record train loss each step and eval loss every eval_interval
/// (plus step 0, whose eval equals the frozen base model's by init
/// identity). init_ms is adapter construction time, kept separate from
/// training time.
template <typename T>
AdaptResult<T> adapt(const TinyLM<T>& base, const TrainConfig& cfg, const Corpus& corpus) {
    cfg.validate();
    AdaptResult<T> out;
    out.model = base;  // value copy; the caller's base stays pristine

    const auto init_start = std::chrono::steady_clock::now();
    attach_adapters(out.model, cfg.adapter());
    out.metrics.init_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - init_start)
            .count();

    out.metrics.method = cfg.method;
    out.metrics.rank = cfg.rank;
    out.metrics.scale = cfg.effective_scale();
    out.metrics.seed = cfg.seed;
    out.metrics.spec_hash = base.spec.hash();
    out.metrics.batch_stream_hash = corpus.stream_hash();

    auto registry = adapter_registry(out.model);
    typename AdamW<T>::Options opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    AdamW<T> adamw(registry, opt);
    Rng dropout_rng(cfg.seed, "adapt-dropout");  // method-independent stream

    const auto start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    };
    const int eval_cap = cfg.eval_batches > 0 ? cfg.eval_batches * cfg.batch : 0;

    out.metrics.records.push_back(
        {0, Split::eval, evaluate(out.model, corpus, eval_cap), elapsed_ms()});
    int64_t last_finite_step = 0;
    try {
        for (int64_t t = 1; t <= cfg.steps; ++t) {
            const double loss =
                train_step(out.model, adamw, train_batch(corpus, cfg.batch, t - 1), dropout_rng);
            out.metrics.records.push_back({t, Split::train, loss, elapsed_ms()});
            last_finite_step = t;
            if (t % cfg.eval_interval == 0 || t == cfg.steps) {
                out.metrics.records.push_back(
                    {t, Split::eval, evaluate(out.model, corpus, eval_cap), elapsed_ms()});
            }
        }
    } catch (const NumericError& e) {
        throw RunError("adaptation diverged after step " + std::to_string(last_finite_step) +
                       ": " + e.what());
    }
    return out;
}

struct CompareCell {
    Method method = Method::lora;
    uint64_t seed = 0;
    bool failed = false;
    std::string error;
    double quarter_loss = 0;
    double final_loss = 0;
    double init_ms = 0;
    uint64_t batch_stream_hash = 0;
    RunMetrics metrics;
};

struct CompareReport {
    int64_t quarter_step = 0;
    std::vector<int64_t> eval_steps;
    std::vector<double> mean_eval_lora;
    std::vector<double> mean_eval_olora;
    std::vector<CompareCell> cells;  // canonical order: lora cells, then olora
    int win_count = 0;               // seeds where olora's quarter loss is strictly lower
    int seeds_total = 0;
    double mean_quarter_lora = 0;
    double mean_quarter_olora = 0;
};

/// Runs both methods on every seed with identical data batches, learning
/// rate, decay, dropout stream, rank and scale; only the initialization
/// differs. Convergence speed is scored at the 25%-of-steps checkpoint.
template <typename T>
CompareReport compare(const TinyLM<T>& base, const MarkovSource& shifted,
                      const CorpusConfig& corpus_cfg, const std::vector<Method>& methods,
                      const std::vector<uint64_t>& seeds, const TrainConfig& shared,
                      int jobs = 1) {
    if (seeds.size() < 3) throw ConfigError("compare needs at least 3 seeds");
    std::vector<Method> canon = methods;
    std::sort(canon.begin(), canon.end(),
              [](Method a, Method b) { return uint8_t(a) < uint8_t(b); });
    canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
    if (canon != std::vector<Method>{Method::lora, Method::olora}) {
        throw ConfigError("compare expects methods {lora, olora}");
    }

    CompareReport report;
    report.seeds_total = int(seeds.size());
    report.quarter_step = shared.steps / 4;

    struct Unit {
        Method method;
        uint64_t seed;
    };
    std::vector<Unit> units;
    for (Method m : canon) {
        for (uint64_t s : seeds) units.push_back({m, s});
    }
    std::vector<CompareCell> cells(units.size());

    auto run_unit = [&](size_t idx) {
        const Unit& u = units[idx];
        CompareCell& cell = cells[idx];
        cell.method = u.method;
        cell.seed = u.seed;
        try {
            Corpus corpus = materialize_corpus(shifted, corpus_cfg, base.spec.context, u.seed);
            TrainConfig cfg = shared;
            cfg.method = u.method;
            cfg.seed = u.seed;
            AdaptResult<T> result = adapt(base, cfg, corpus);
            cell.metrics = std::move(result.metrics);
            cell.init_ms = cell.metrics.init_ms;
            cell.batch_stream_hash = cell.metrics.batch_stream_hash;
            const MetricRecord* quarter = cell.metrics.eval_at(report.quarter_step);
            const MetricRecord* final_rec = cell.metrics.eval_at(shared.steps);
            if (!quarter || !final_rec) {
                throw RunError("missing eval record at the quarter or final checkpoint");
            }
            cell.quarter_loss = quarter->loss;
            cell.final_loss = final_rec->loss;
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
        }
    };

    if (jobs <= 1) {
        for (size_t i = 0; i < units.size(); ++i) run_unit(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        const size_t n_threads = std::min(size_t(jobs), units.size());
        for (size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < units.size(); i = next.fetch_add(1)) {
                    run_unit(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    // fair-comparison contract: identical batch streams per seed
    for (size_t s = 0; s < seeds.size(); ++s) {
        const CompareCell& lora_cell = cells[s];
        const CompareCell& olora_cell = cells[seeds.size() + s];
        if (!lora_cell.failed && !olora_cell.failed &&
            lora_cell.batch_stream_hash != olora_cell.batch_stream_hash) {
            throw RunError("batch streams diverged between methods for seed " +
                           std::to_string(seeds[s]));
        }
    }

    report.cells = std::move(cells);
    int wins = 0;
    double sum_quarter_lora = 0, sum_quarter_olora = 0;
    int ok_pairs = 0;
    for (size_t s = 0; s < seeds.size(); ++s) {
        const CompareCell& l = report.cells[s];
        const CompareCell& o = report.cells[seeds.size() + s];
        if (l.failed || o.failed) continue;
        ++ok_pairs;
        sum_quarter_lora += l.quarter_loss;
        sum_quarter_olora += o.quarter_loss;
        if (o.quarter_loss < l.quarter_loss) ++wins;
    }
    report.win_count = wins;
    if (ok_pairs > 0) {
        report.mean_quarter_lora = sum_quarter_lora / ok_pairs;
        report.mean_quarter_olora = sum_quarter_olora / ok_pairs;
    }

    // mean eval trajectories over seeds, per method
    auto mean_trajectory = [&](size_t offset, std::vector<double>& out_mean) {
        std::map<int64_t, std::pair<double, int>> acc;
        for (size_t s = 0; s < seeds.size(); ++s) {
            const CompareCell& cell = report.cells[offset + s];
            if (cell.failed) continue;
            for (const MetricRecord& r : cell.metrics.records) {
                if (r.split != Split::eval) continue;
                auto& slot = acc[r.step];
                slot.first += r.loss;
                slot.second += 1;
            }
        }
        report.eval_steps.clear();
        out_mean.clear();
        for (const auto& [step, sum_count] : acc) {
            report.eval_steps.push_back(step);
            out_mean.push_back(sum_count.first / sum_count.second);
        }
    };
    mean_trajectory(0, report.mean_eval_lora);
    mean_trajectory(seeds.size(), report.mean_eval_olora);
    return report;
}

struct OverheadReport {
    double init_ms = 0;
    double per_step_ms = 0;
    double ratio = 0;  // init_ms / (steps * per_step_ms)
};

/// Measures the one-time QR initialization cost against the steady-state
/// training step cost, the amortization argument in numbers.
template <typename T>
OverheadReport qr_overhead_report(const ModelSpec& spec, const TrainConfig& cfg,
                                  const MarkovSource& source) {
    if (cfg.steps < 100) throw ConfigError("qr_overhead_report needs steps >= 100");
    OverheadReport report;

    TinyLM<T> model = init_model<T>(spec, cfg.seed);
    AdapterConfig acfg = cfg.adapter();
    acfg.method = Method::olora;
    // repeat until the clock registers; one attach is microseconds
    int reps = 0;
    const auto t0 = std::chrono::steady_clock::now();
    double total_ms = 0;
    do {
        TinyLM<T> fresh = model;
        const auto a0 = std::chrono::steady_clock::now();
        attach_adapters(fresh, acfg);
        total_ms +=
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a0)
                .count();
        ++reps;
    } while (total_ms <= 0 && reps < 1000 &&
             std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2));
    report.init_ms = total_ms / reps;

    TinyLM<T> adapted = model;
    attach_adapters(adapted, acfg);
    auto registry = adapter_registry(adapted);
    typename AdamW<T>::Options opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    AdamW<T> adamw(registry, opt);
    Rng dropout_rng(cfg.seed, "overhead-dropout");

    CorpusConfig ccfg;
    ccfg.train_sequences = 256;
    ccfg.eval_sequences = 64;
    Corpus corpus = materialize_corpus(source, ccfg, spec.context, cfg.seed);

    const int warmup = 3, measured = 30;
    for (int t = 0; t < warmup; ++t) {
        train_step(adapted, adamw, train_batch(corpus, cfg.batch, t), dropout_rng);
    }
    const auto m0 = std::chrono::steady_clock::now();
    for (int t = 0; t < measured; ++t) {
        train_step(adapted, adamw, train_batch(corpus, cfg.batch, warmup + t), dropout_rng);
    }
    report.per_step_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - m0).count() /
        measured;
    report.ratio = report.init_ms / (double(cfg.steps) * report.per_step_ms);
    return report;
}

}  // namespace olora
