// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "olora/data.hpp"
#include "olora/model.hpp"
#include "olora/persist.hpp"

namespace olora {

struct CorpusConfig {
    uint64_t source_seed = 42;
    double shift = 0.5;
    uint64_t shift_seed = 43;
    int sequence_length = 0;  // 0 -> model context length
    int train_sequences = 32768;
    int eval_sequences = 128;

    void validate() const {
        if (shift < 0 || shift > 1) throw ConfigError("corpus.shift must be in [0, 1]");
        if (eval_sequences < 64) throw ConfigError("corpus.eval_sequences must be >= 64");
        if (train_sequences < 1) throw ConfigError("corpus.train_sequences must be >= 1");
    }
};

namespace detail {

inline double u64_lo(uint64_t v) { return double(uint32_t(v & 0xffffffffu)); }
inline double u64_hi(uint64_t v) { return double(uint32_t(v >> 32)); }
inline uint64_t u64_join(double lo, double hi) {
    return uint64_t(uint32_t(lo)) | (uint64_t(uint32_t(hi)) << 32);
}

}  // namespace detail

/// Base checkpoints carry the model tensors plus enough metadata (model
/// spec and corpus config) that adaptation can run from the file alone.
template <typename T>
Checkpoint model_to_checkpoint(const TinyLM<T>& model, const CorpusConfig& corpus) {
    Checkpoint ckpt;
    ckpt.role = CkptRole::base;
    ckpt.add_meta("meta/vocab", model.spec.vocab);
    ckpt.add_meta("meta/embed", model.spec.embed);
    ckpt.add_meta("meta/context", model.spec.context);
    ckpt.add_meta("meta/hidden", model.spec.hidden);
    ckpt.add_meta("meta/nonlin", double(uint8_t(model.spec.nonlin)));
    ckpt.add_meta("meta/precision", model.spec.precision);
    ckpt.add_meta("meta/corpus_seed_lo", detail::u64_lo(corpus.source_seed));
    ckpt.add_meta("meta/corpus_seed_hi", detail::u64_hi(corpus.source_seed));
    ckpt.add_meta("meta/corpus_shift", corpus.shift);
    ckpt.add_meta("meta/corpus_shift_seed_lo", detail::u64_lo(corpus.shift_seed));
    ckpt.add_meta("meta/corpus_shift_seed_hi", detail::u64_hi(corpus.shift_seed));
    ckpt.add_meta("meta/corpus_train_sequences", corpus.train_sequences);
    ckpt.add_meta("meta/corpus_eval_sequences", corpus.eval_sequences);
    ckpt.records.push_back(make_record("model/emb", model.embedding.value));
    ckpt.records.push_back(make_record("model/wq", model.wq.weight.value));
    ckpt.records.push_back(make_record("model/wk", model.wk.weight.value));
    ckpt.records.push_back(make_record("model/wv", model.wv.weight.value));
    ckpt.records.push_back(make_record("model/wo", model.wo.weight.value));
    ckpt.records.push_back(make_record("model/w1", model.w1.weight.value));
    ckpt.records.push_back(make_record("model/w2", model.w2.weight.value));
    ckpt.records.push_back(make_record("model/head", model.head.value));
    return ckpt;
}

inline ModelSpec spec_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.role != CkptRole::base) throw FormatError("expected a base checkpoint");
    ModelSpec spec;
    spec.vocab = int(ckpt.meta("meta/vocab"));
    spec.embed = int(ckpt.meta("meta/embed"));
    spec.context = int(ckpt.meta("meta/context"));
    spec.hidden = int(ckpt.meta("meta/hidden"));
    spec.nonlin = Nonlinearity(uint8_t(ckpt.meta("meta/nonlin")));
    spec.precision = int(ckpt.meta("meta/precision"));
    spec.validate();
    return spec;
}

inline CorpusConfig corpus_from_checkpoint(const Checkpoint& ckpt) {
    CorpusConfig corpus;
    corpus.source_seed = detail::u64_join(ckpt.meta("meta/corpus_seed_lo"),
                                          ckpt.meta("meta/corpus_seed_hi"));
    corpus.shift = ckpt.meta("meta/corpus_shift");
    corpus.shift_seed = detail::u64_join(ckpt.meta("meta/corpus_shift_seed_lo"),
                                         ckpt.meta("meta/corpus_shift_seed_hi"));
    corpus.train_sequences = int(ckpt.meta("meta/corpus_train_sequences"));
    corpus.eval_sequences = int(ckpt.meta("meta/corpus_eval_sequences"));
    return corpus;
}

template <typename T>
TinyLM<T> model_from_checkpoint(const Checkpoint& ckpt) {
    const ModelSpec spec = spec_from_checkpoint(ckpt);
    const int expect_precision = std::is_same_v<T, float> ? 32 : 64;
    if (spec.precision != expect_precision) {
        throw FormatError("checkpoint precision " + std::to_string(spec.precision) +
                          " does not match the requested pipeline");
    }
    TinyLM<T> m;
    m.spec = spec;
    m.embedding = Param<T>("emb", record_to_matrix<T>(ckpt.require("model/emb")));
    m.wq.weight = Param<T>("wq", record_to_matrix<T>(ckpt.require("model/wq")));
    m.wk.weight = Param<T>("wk", record_to_matrix<T>(ckpt.require("model/wk")));
    m.wv.weight = Param<T>("wv", record_to_matrix<T>(ckpt.require("model/wv")));
    m.wo.weight = Param<T>("wo", record_to_matrix<T>(ckpt.require("model/wo")));
    m.w1.weight = Param<T>("w1", record_to_matrix<T>(ckpt.require("model/w1")));
    m.w2.weight = Param<T>("w2", record_to_matrix<T>(ckpt.require("model/w2")));
    m.head = Param<T>("head", record_to_matrix<T>(ckpt.require("model/head")));
    return m;
}

/// Adapter checkpoints hold only the factor pairs plus the config echo;
/// base weights are reconstructed from the base checkpoint and the
/// deterministic init, never duplicated here.
template <typename T>
Checkpoint adapters_to_checkpoint(const TinyLM<T>& model, const AdapterConfig& cfg) {
    Checkpoint ckpt;
    ckpt.role = CkptRole::adapter;
    ckpt.add_meta("meta/method", double(uint8_t(cfg.method)));
    ckpt.add_meta("meta/rank", cfg.rank);
    ckpt.add_meta("meta/alpha", cfg.alpha);
    ckpt.add_meta("meta/scale", cfg.effective_scale());
    ckpt.add_meta("meta/dropout", cfg.dropout);
    ckpt.add_meta("meta/seed_lo", detail::u64_lo(cfg.seed));
    ckpt.add_meta("meta/seed_hi", detail::u64_hi(cfg.seed));
    const auto& names = TinyLM<T>::slot_names();
    auto slots = model.slots();
    for (size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]->adapter.has_value()) {
            throw StateError("adapter checkpoint requested but layer " + std::string(names[i]) +
                             " has no adapter");
        }
        ckpt.records.push_back(make_record(std::string("adapter/") + names[i] + "/B",
                                           slots[i]->adapter->b_factor.value));
        ckpt.records.push_back(make_record(std::string("adapter/") + names[i] + "/A",
                                           slots[i]->adapter->a_factor.value));
    }
    return ckpt;
}

inline AdapterConfig adapter_config_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.role != CkptRole::adapter) throw FormatError("expected an adapter checkpoint");
    AdapterConfig cfg;
    cfg.method = Method(uint8_t(ckpt.meta("meta/method")));
    cfg.rank = int(ckpt.meta("meta/rank"));
    cfg.alpha = ckpt.meta("meta/alpha");
    cfg.scale = ckpt.meta("meta/scale");
    cfg.dropout = ckpt.meta("meta/dropout");
    cfg.seed = detail::u64_join(ckpt.meta("meta/seed_lo"), ckpt.meta("meta/seed_hi"));
    return cfg;
}

/// Rebuilds the adapted model: attach adapters per the stored config (which
/// reproduces the deterministic init, including OLoRA's shifted base), then
/// swap in the trained factors.
template <typename T>
void load_adapters(TinyLM<T>& model, const Checkpoint& ckpt) {
    const AdapterConfig cfg = adapter_config_from_checkpoint(ckpt);
    attach_adapters(model, cfg);
    const auto& names = TinyLM<T>::slot_names();
    auto slots = model.slots();
    for (size_t i = 0; i < slots.size(); ++i) {
        Matrix<T> b = record_to_matrix<T>(ckpt.require(std::string("adapter/") + names[i] + "/B"));
        Matrix<T> a = record_to_matrix<T>(ckpt.require(std::string("adapter/") + names[i] + "/A"));
        AdaptedLinear<T>& ad = *slots[i]->adapter;
        if (b.rows() != ad.d() || b.cols() != ad.rank() || a.rows() != ad.rank() ||
            a.cols() != ad.k()) {
            throw ShapeError("adapter tensors for layer " + std::string(names[i]) +
                             " do not match the base model: " + b.shape() + " x " + a.shape());
        }
        ad.b_factor.value = std::move(b);
        ad.a_factor.value = std::move(a);
        slots[i]->adapter_base->value = ad.base;  // unchanged, but keep in sync
    }
}

}  // namespace olora
