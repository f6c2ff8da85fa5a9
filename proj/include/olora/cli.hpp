// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "olora/train.hpp"

namespace olora::cli {

struct CompareSettings {
    int seeds = 5;
    int jobs = 1;
};

struct CliConfig {
    ModelSpec model;
    CorpusConfig corpus;
    PretrainSettings pretrain;
    TrainConfig adapt;
    CompareSettings compare;
};

namespace detail {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& scope) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown config key '" + scope + "." + key + "'");
        }
    }
}

template <typename T>
void fetch(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

}  // namespace detail

inline CliConfig parse_config(const std::string& text) {
    using detail::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    detail::check_keys(root, {"model", "corpus", "pretrain", "adapt", "compare"}, "");

    CliConfig cfg;
    if (root.contains("model")) {
        const json& m = root["model"];
        detail::check_keys(m, {"vocab", "embed", "context", "hidden", "nonlinearity", "precision"},
                           "model");
        detail::fetch(m, "vocab", cfg.model.vocab);
        detail::fetch(m, "embed", cfg.model.embed);
        detail::fetch(m, "context", cfg.model.context);
        detail::fetch(m, "hidden", cfg.model.hidden);
        if (m.contains("nonlinearity")) {
            cfg.model.nonlin = parse_nonlinearity(m["nonlinearity"].get<std::string>());
        }
        detail::fetch(m, "precision", cfg.model.precision);
    }
    if (root.contains("corpus")) {
        const json& c = root["corpus"];
        detail::check_keys(c,
                           {"source_seed", "shift", "shift_seed", "sequence_length",
                            "train_sequences", "eval_sequences"},
                           "corpus");
        detail::fetch(c, "source_seed", cfg.corpus.source_seed);
        detail::fetch(c, "shift", cfg.corpus.shift);
        detail::fetch(c, "shift_seed", cfg.corpus.shift_seed);
        detail::fetch(c, "sequence_length", cfg.corpus.sequence_length);
        detail::fetch(c, "train_sequences", cfg.corpus.train_sequences);
        detail::fetch(c, "eval_sequences", cfg.corpus.eval_sequences);
    }
    if (root.contains("pretrain")) {
        const json& p = root["pretrain"];
        detail::check_keys(p, {"steps", "batch", "lr", "weight_decay", "eval_interval", "seed"},
                           "pretrain");
        detail::fetch(p, "steps", cfg.pretrain.steps);
        detail::fetch(p, "batch", cfg.pretrain.batch);
        detail::fetch(p, "lr", cfg.pretrain.lr);
        detail::fetch(p, "weight_decay", cfg.pretrain.weight_decay);
        detail::fetch(p, "eval_interval", cfg.pretrain.eval_interval);
        detail::fetch(p, "seed", cfg.pretrain.seed);
    }
    if (root.contains("adapt")) {
        const json& a = root["adapt"];
        detail::check_keys(a,
                           {"method", "rank", "alpha", "scale", "dropout", "lr", "weight_decay",
                            "steps", "batch", "eval_interval", "eval_batches", "seed"},
                           "adapt");
        if (a.contains("method")) cfg.adapt.method = parse_method(a["method"].get<std::string>());
        detail::fetch(a, "rank", cfg.adapt.rank);
        detail::fetch(a, "alpha", cfg.adapt.alpha);
        if (a.contains("scale")) cfg.adapt.scale = a["scale"].get<double>();
        detail::fetch(a, "dropout", cfg.adapt.dropout);
        detail::fetch(a, "lr", cfg.adapt.lr);
        detail::fetch(a, "weight_decay", cfg.adapt.weight_decay);
        detail::fetch(a, "steps", cfg.adapt.steps);
        detail::fetch(a, "batch", cfg.adapt.batch);
        detail::fetch(a, "eval_interval", cfg.adapt.eval_interval);
        detail::fetch(a, "eval_batches", cfg.adapt.eval_batches);
        detail::fetch(a, "seed", cfg.adapt.seed);
    }
    if (root.contains("compare")) {
        const json& c = root["compare"];
        detail::check_keys(c, {"seeds", "jobs"}, "compare");
        detail::fetch(c, "seeds", cfg.compare.seeds);
        detail::fetch(c, "jobs", cfg.compare.jobs);
    }
    cfg.adapt.precision = cfg.model.precision;
    cfg.model.validate();
    cfg.corpus.validate();
    return cfg;
}

inline CliConfig load_config(const std::optional<std::string>& path) {
    if (!path.has_value()) {
        CliConfig cfg;  // compiled-in defaults
        return cfg;
    }
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file: " + *path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const RankError*>(&e) ||
        dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const FormatError*>(&e)) {
        return 2;
    }
    return 3;  // runtime: divergence, IO, corruption, everything else
}

namespace detail {

template <typename Fn>
int dispatch_precision(int precision, Fn&& fn) {
    if (precision == 64) return fn(double{});
    return fn(float{});
}

inline void ensure_parent_dir(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline MarkovSource shifted_source_for(const CorpusConfig& corpus, int vocab) {
    return shift_source(make_source(vocab, corpus.source_seed), corpus.shift, corpus.shift_seed);
}

}  // namespace detail

// ---- pretrain ----

struct PretrainArgs {
    std::optional<std::string> config_path;
    std::string out_path;
    std::optional<uint64_t> seed;
};

inline int cmd_pretrain(const PretrainArgs& args) {
    try {
        CliConfig cfg = load_config(args.config_path);
        if (args.seed.has_value()) cfg.pretrain.seed = *args.seed;
        auto source = make_source(cfg.model.vocab, cfg.corpus.source_seed);
        return detail::dispatch_precision(cfg.model.precision, [&](auto tag) {
            using T = decltype(tag);
            TinyLM<T> model = pretrain<T>(cfg.model, source, cfg.corpus, cfg.pretrain);
            detail::ensure_parent_dir(args.out_path);
            write_checkpoint(args.out_path, model_to_checkpoint(model, cfg.corpus));
            std::cout << "pretrained model written to " << args.out_path << "\n";
            return 0;
        });
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---- adapt ----

struct AdaptArgs {
    std::string base_path;
    std::optional<std::string> config_path;
    std::optional<std::string> method;
    std::optional<int> rank;
    std::optional<double> scale;
    std::optional<int> steps;
    std::optional<uint64_t> seed;
    std::string metrics_path;
    std::string out_path;
};

inline int cmd_adapt(const AdaptArgs& args) {
    try {
        CliConfig cfg = load_config(args.config_path);
        TrainConfig train = cfg.adapt;
        if (args.method.has_value()) train.method = parse_method(*args.method);
        if (args.rank.has_value()) train.rank = *args.rank;
        if (args.scale.has_value()) train.scale = *args.scale;
        if (args.steps.has_value()) train.steps = *args.steps;
        if (args.seed.has_value()) train.seed = *args.seed;

        Checkpoint base_ckpt = read_checkpoint(args.base_path);
        const ModelSpec spec = spec_from_checkpoint(base_ckpt);
        CorpusConfig corpus_cfg =
            args.config_path.has_value() ? cfg.corpus : corpus_from_checkpoint(base_ckpt);
        train.precision = spec.precision;

        return detail::dispatch_precision(spec.precision, [&](auto tag) {
            using T = decltype(tag);
            TinyLM<T> base = model_from_checkpoint<T>(base_ckpt);
            auto shifted = detail::shifted_source_for(corpus_cfg, spec.vocab);
            Corpus corpus = materialize_corpus(shifted, corpus_cfg, spec.context, train.seed);
            AdaptResult<T> result = adapt(base, train, corpus);
            detail::ensure_parent_dir(args.metrics_path);
            write_metrics_csv(args.metrics_path, result.metrics);
            detail::ensure_parent_dir(args.out_path);
            write_checkpoint(args.out_path, adapters_to_checkpoint(result.model, train.adapter()));
            std::cout << "adapter written to " << args.out_path << ", metrics to "
                      << args.metrics_path << "\n";
            return 0;
        });
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---- compare ----

struct CompareArgs {
    std::optional<std::string> config_path;
    std::optional<int> seeds;
    std::string outdir;
    std::optional<int> jobs;
    std::optional<std::string> base_path;  // reuse an existing base checkpoint
};

inline int cmd_compare(const CompareArgs& args) {
    try {
        CliConfig cfg = load_config(args.config_path);
        if (args.seeds.has_value()) cfg.compare.seeds = *args.seeds;
        if (args.jobs.has_value()) cfg.compare.jobs = *args.jobs;
        if (cfg.compare.seeds < 3) {
            throw ConfigError("compare needs at least 3 seeds, got " +
                              std::to_string(cfg.compare.seeds));
        }
        std::filesystem::create_directories(args.outdir);

        return detail::dispatch_precision(cfg.model.precision, [&](auto tag) {
            using T = decltype(tag);
            TinyLM<T> base;
            if (args.base_path.has_value()) {
                base = model_from_checkpoint<T>(read_checkpoint(*args.base_path));
            } else {
                auto source = make_source(cfg.model.vocab, cfg.corpus.source_seed);
                base = pretrain<T>(cfg.model, source, cfg.corpus, cfg.pretrain);
            }
            auto shifted = detail::shifted_source_for(cfg.corpus, base.spec.vocab);
            std::vector<uint64_t> seeds;
            for (int s = 0; s < cfg.compare.seeds; ++s) seeds.push_back(uint64_t(s));

            CompareReport report = compare(base, shifted, cfg.corpus,
                                           {Method::lora, Method::olora}, seeds, cfg.adapt,
                                           cfg.compare.jobs);

            detail::ordered_json summary;
            summary["quarter_step"] = report.quarter_step;
            summary["seeds"] = seeds;
            summary["rank"] = cfg.adapt.rank;
            summary["scale"] = cfg.adapt.effective_scale();
            summary["steps"] = cfg.adapt.steps;
            summary["win_count"] = report.win_count;
            summary["mean_quarter_loss"] = {{"lora", report.mean_quarter_lora},
                                            {"olora", report.mean_quarter_olora}};
            summary["eval_steps"] = report.eval_steps;
            summary["mean_eval_loss"] = {{"lora", report.mean_eval_lora},
                                         {"olora", report.mean_eval_olora}};
            detail::ordered_json runs = detail::ordered_json::array();
            for (const CompareCell& cell : report.cells) {
                const std::string csv_name = "metrics_" + to_string(cell.method) + "_seed" +
                                             std::to_string(cell.seed) + ".csv";
                detail::ordered_json run;
                run["method"] = to_string(cell.method);
                run["seed"] = cell.seed;
                run["csv"] = csv_name;
                run["failed"] = cell.failed;
                if (cell.failed) {
                    run["error"] = cell.error;
                } else {
                    run["quarter_loss"] = cell.quarter_loss;
                    run["final_loss"] = cell.final_loss;
                    run["init_ms"] = cell.init_ms;
                    run["batch_stream_hash"] = cell.batch_stream_hash;
                    write_metrics_csv((std::filesystem::path(args.outdir) / csv_name).string(),
                                      cell.metrics);
                }
                runs.push_back(std::move(run));
            }
            summary["runs"] = std::move(runs);

            const auto summary_path = std::filesystem::path(args.outdir) / "summary.json";
            std::ofstream out(summary_path);
            if (!out) throw IoError("cannot write " + summary_path.string());
            out << summary.dump(2) << "\n";
            std::cout << "compare: win_count=" << report.win_count << "/" << seeds.size()
                      << ", mean quarter loss lora=" << report.mean_quarter_lora
                      << " olora=" << report.mean_quarter_olora << "\n";
            return 0;
        });
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---- diagnose ----

struct DiagnoseArgs {
    std::string base_path;
    std::string adapter_path;
    std::string out_path;
};

inline int cmd_diagnose(const DiagnoseArgs& args) {
    try {
        Checkpoint base_ckpt = read_checkpoint(args.base_path);
        Checkpoint adapter_ckpt = read_checkpoint(args.adapter_path);
        const ModelSpec spec = spec_from_checkpoint(base_ckpt);
        return detail::dispatch_precision(spec.precision, [&](auto tag) {
            using T = decltype(tag);
            TinyLM<T> model = model_from_checkpoint<T>(base_ckpt);
            TinyLM<T> original = model_from_checkpoint<T>(base_ckpt);
            load_adapters(model, adapter_ckpt);

            detail::ordered_json report;
            report["base"] = args.base_path;
            report["adapter"] = args.adapter_path;
            detail::ordered_json layers = detail::ordered_json::array();
            auto slots = model.slots();
            auto orig_slots = original.slots();
            const auto& names = TinyLM<T>::slot_names();
            for (size_t i = 0; i < slots.size(); ++i) {
                SpectralReport sr =
                    spectral_diagnose(*slots[i]->adapter, orig_slots[i]->weight.value);
                detail::ordered_json layer;
                layer["layer"] = names[i];
                layer["sigma_original"] = sr.sigma_original;
                layer["sigma_update"] = sr.sigma_update;
                layer["orthonormality_drift"] = sr.orthonormality_drift;
                layers.push_back(std::move(layer));
            }
            report["layers"] = std::move(layers);

            detail::ensure_parent_dir(args.out_path);
            std::ofstream out(args.out_path);
            if (!out) throw IoError("cannot write " + args.out_path);
            out << report.dump(2) << "\n";
            std::cout << "spectral report written to " << args.out_path << "\n";
            return 0;
        });
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---- gradcheck ----

struct GradcheckArgs {
    std::optional<std::string> config_path;
    bool corrupt_backward = false;  // test fixture: negative control
};

inline int cmd_gradcheck(const GradcheckArgs& args) {
    try {
        CliConfig cfg = load_config(args.config_path);
        ModelSpec spec = cfg.model;
        spec.precision = 64;  // verification runs in 64-bit

        bool ok = true;
        for (Method method : {Method::lora, Method::olora}) {
            TinyLM<double> model = init_model<double>(spec, cfg.pretrain.seed);
            AdapterConfig acfg = cfg.adapt.adapter();
            acfg.method = method;
            auto registry = attach_adapters(model, acfg);

            auto source = make_source(spec.vocab, cfg.corpus.source_seed);
            Rng stream(cfg.adapt.seed, "gradcheck-batch");
            TokenBatch batch;
            batch.batch = 4;
            batch.context = spec.context;
            batch.tokens = sample_tokens(source, batch.batch, spec.context, stream);

            // one analytic backward with recorded dropout masks, then a
            // deterministic replayed loss for the finite differences
            std::vector<Matrix<double>> masks;
            for (auto* p : registry) p->zero_grad();
            {
                Tape<double> tape;
                Rng drop_rng(cfg.adapt.seed, "gradcheck-dropout");
                DropoutPlan<double> plan;
                plan.rng = &drop_rng;
                plan.record = &masks;
                tape.backward(build_loss(tape, model, batch, /*train=*/true, plan));
            }
            if (args.corrupt_backward) {
                registry.front()->grad(0, 0) += 0.25;
            }
            auto loss_fn = [&]() {
                Tape<double> tape;
                DropoutPlan<double> plan;
                plan.replay = &masks;
                return tape.loss_value(build_loss(tape, model, batch, true, plan));
            };
            GradCheckReport report = grad_check<double>(registry, loss_fn, 1e-4);

            std::printf("method %-5s  (%zu params)\n", to_string(method).c_str(),
                        report.entries.size());
            std::printf("  %-8s %8s %14s\n", "param", "coords", "max_rel_err");
            for (const GradCheckEntry& e : report.entries) {
                std::printf("  %-8s %8d %14.3e%s\n", e.name.c_str(), e.coords_checked,
                            e.max_rel_err, e.max_rel_err > 1e-4 ? "  <-- FAIL" : "");
            }
            if (report.max_rel_err > 1e-4) {
                ok = false;
                for (const GradCheckEntry& e : report.entries) {
                    if (e.max_rel_err > 1e-4) {
                        std::cerr << "error: gradient mismatch on param '" << e.name
                                  << "' (max relative error " << e.max_rel_err << ")\n";
                    }
                }
            }
        }
        if (!ok) return 4;
        std::cout << "gradcheck passed (tolerance 1e-4)\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

}  // namespace olora::cli
