// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "olora/adapters.hpp"
#include "olora/autograd.hpp"
#include "olora/matrix.hpp"
#include "olora/rng.hpp"

namespace olora {

struct ModelSpec {
    int vocab = 32;
    int embed = 32;
    int context = 8;
    int hidden = 64;
    Nonlinearity nonlin = Nonlinearity::gelu;
    int precision = 32;

    void validate() const {
        if (vocab < 2) throw ConfigError("model.vocab must be >= 2");
        if (embed < 1 || hidden < 1) throw ConfigError("model dims must be positive");
        if (context < 2) throw ConfigError("model.context must be >= 2 (next-token loss)");
        if (precision != 32 && precision != 64) {
            throw ConfigError("model.precision must be 32 or 64");
        }
    }

    uint64_t hash() const {
        std::string s = "V=" + std::to_string(vocab) + ",e=" + std::to_string(embed) +
                        ",c=" + std::to_string(context) + ",h=" + std::to_string(hidden) +
                        ",nl=" + to_string(nonlin) + ",p=" + std::to_string(precision);
        return fnv1a64(s);
    }
};

/// Flat batch of token ids, sequence-major.
struct TokenBatch {
    int batch = 0;
    int context = 0;
    std::vector<int> tokens;

    const int* sequence(int s) const { return tokens.data() + size_t(s) * context; }
};

/// Dense projection that may carry an adapter. While an adapter is attached
/// the pre-trained weight is frozen and the forward pass multiplies by the
/// adapter's stored base instead (identical for LoRA, shifted for OLoRA).
template <typename T>
struct DenseSlot {
    Param<T> weight;
    std::optional<AdaptedLinear<T>> adapter;
    std::optional<Param<T>> adapter_base;  // frozen leaf used on the tape
};

/// One-block causal language model: embedding -> single-head self-attention
/// -> two-layer MLP -> output head, residual connections around both blocks.
/// The six dense projections are the adaptation targets; embedding and head
/// are never adapted.
template <typename T>
struct TinyLM {
    ModelSpec spec;
    Param<T> embedding;  // V x e
    DenseSlot<T> wq, wk, wv, wo;  // e x e
    DenseSlot<T> w1;              // h x e
    DenseSlot<T> w2;              // e x h
    Param<T> head;       // V x e

    std::array<DenseSlot<T>*, 6> slots() {
        return {&wq, &wk, &wv, &wo, &w1, &w2};
    }
    std::array<const DenseSlot<T>*, 6> slots() const {
        return {&wq, &wk, &wv, &wo, &w1, &w2};
    }
    static const std::array<const char*, 6>& slot_names() {
        static const std::array<const char*, 6> names{"wq", "wk", "wv", "wo", "w1", "w2"};
        return names;
    }

    std::vector<Param<T>*> base_params() {
        return {&embedding,  &wq.weight, &wk.weight, &wv.weight,
                &wo.weight, &w1.weight, &w2.weight, &head};
    }
};

template <typename T>
TinyLM<T> init_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    TinyLM<T> m;
    m.spec = spec;
    auto draw = [&](const char* name, int rows, int cols, int fan_in) {
        Rng rng(seed, std::string("init/") + name);
        const double bound = 1.0 / std::sqrt(double(fan_in));
        return Param<T>(name, random_uniform<T>(rows, cols, -bound, bound, rng));
    };
    const int v = spec.vocab, e = spec.embed, h = spec.hidden;
    m.embedding = draw("emb", v, e, e);
    m.wq.weight = draw("wq", e, e, e);
    m.wk.weight = draw("wk", e, e, e);
    m.wv.weight = draw("wv", e, e, e);
    m.wo.weight = draw("wo", e, e, e);
    m.w1.weight = draw("w1", h, e, e);
    m.w2.weight = draw("w2", e, h, h);
    m.head = draw("head", v, e, e);
    return m;
}

/// Wraps every targeted projection per the config and freezes everything
/// else. Returns the trainable registry, ordered (B, A) per layer in model
/// order, which downstream code (optimizer, grad check, checkpointing)
/// treats as the canonical adapter enumeration.
template <typename T>
std::vector<Param<T>*> attach_adapters(TinyLM<T>& model, const AdapterConfig& cfg) {
    cfg.validate();
    for (Param<T>* p : model.base_params()) p->trainable = false;

    std::vector<Param<T>*> registry;
    auto slots = model.slots();
    const auto& names = TinyLM<T>::slot_names();
    for (size_t i = 0; i < slots.size(); ++i) {
        DenseSlot<T>& slot = *slots[i];
        AdapterConfig layer_cfg = cfg;
        layer_cfg.seed = derive_seed(cfg.seed, names[i]);
        slot.adapter = cfg.method == Method::lora ? lora_init(slot.weight.value, layer_cfg)
                                                  : olora_init(slot.weight.value, layer_cfg);
        slot.adapter->b_factor.name = std::string(names[i]) + "/B";
        slot.adapter->a_factor.name = std::string(names[i]) + "/A";
        slot.adapter_base =
            Param<T>(std::string(names[i]) + "/base", slot.adapter->base, /*train=*/false);
        registry.push_back(&slot.adapter->b_factor);
        registry.push_back(&slot.adapter->a_factor);
    }
    return registry;
}

template <typename T>
size_t registered_param_count(const std::vector<Param<T>*>& registry) {
    size_t n = 0;
    for (const Param<T>* p : registry) n += p->value.size();
    return n;
}

/// Re-derives the trainable registry from the attached adapters. Pointers
/// are only valid while the model stays where it is.
template <typename T>
std::vector<Param<T>*> adapter_registry(TinyLM<T>& model) {
    std::vector<Param<T>*> registry;
    for (DenseSlot<T>* slot : model.slots()) {
        if (slot->adapter.has_value()) {
            registry.push_back(&slot->adapter->b_factor);
            registry.push_back(&slot->adapter->a_factor);
        }
    }
    return registry;
}

/// Serves dropout masks for one tape recording. Three modes: draw from an
/// RNG, draw and record, or replay a recorded sequence (used by the
/// gradient checker, which must see a deterministic loss).
template <typename T>
struct DropoutPlan {
    Rng* rng = nullptr;
    std::vector<Matrix<T>>* record = nullptr;
    const std::vector<Matrix<T>>* replay = nullptr;
    size_t replay_pos = 0;

    Matrix<T> next(int rows, int cols, double p) {
        if (replay != nullptr) {
            if (replay_pos >= replay->size()) {
                throw StateError("dropout replay exhausted");
            }
            return (*replay)[replay_pos++];
        }
        if (rng == nullptr) {
            throw StateError("train-mode dropout needs an RNG");
        }
        Matrix<T> m = dropout_mask<T>(rows, cols, p, *rng);
        if (record != nullptr) record->push_back(m);
        return m;
    }
};

namespace detail {

template <typename T>
int apply_dense(Tape<T>& tape, DenseSlot<T>& slot, int x, bool train_mode, DropoutPlan<T>& drop) {
    if (!slot.adapter.has_value()) {
        return tape.matmul(tape.leaf(slot.weight), x);
    }
    AdaptedLinear<T>& ad = *slot.adapter;
    int base = tape.matmul(tape.leaf(*slot.adapter_base), x);
    int branch_in = x;
    if (train_mode && ad.dropout_p > 0) {
        const Matrix<T>& xv = tape.value(x);
        branch_in = tape.dropout(x, drop.next(xv.rows(), xv.cols(), ad.dropout_p));
    }
    int low = tape.matmul(tape.leaf(ad.b_factor), tape.matmul(tape.leaf(ad.a_factor), branch_in));
    return tape.add(base, tape.scale_by(low, ad.scale));
}

template <typename T>
Matrix<T> causal_mask(int context) {
    Matrix<T> m(context, context);
    for (int i = 0; i < context; ++i) {
        for (int j = i + 1; j < context; ++j) m(i, j) = T(-1e30);
    }
    return m;
}

// Runs the block up to the logits for one sequence. Row i of the score
// matrix is query position i, so the row softmax normalizes over keys.
template <typename T>
int sequence_logits(Tape<T>& tape, TinyLM<T>& model, const std::vector<int>& tokens,
                    int mask_node, bool train_mode, DropoutPlan<T>& drop) {
    const T inv_sqrt_e = T(1.0 / std::sqrt(double(model.spec.embed)));
    int x = tape.gather(tape.leaf(model.embedding), tokens);
    int q = apply_dense(tape, model.wq, x, train_mode, drop);
    int k = apply_dense(tape, model.wk, x, train_mode, drop);
    int v = apply_dense(tape, model.wv, x, train_mode, drop);
    int scores = tape.scale_by(tape.matmul(q, k, true, false), inv_sqrt_e);
    int probs = tape.row_softmax(tape.add(scores, mask_node));
    int attn = tape.matmul(v, probs, false, true);
    int x1 = tape.add(x, apply_dense(tape, model.wo, attn, train_mode, drop));
    int hidden = tape.nonlin(apply_dense(tape, model.w1, x1, train_mode, drop), model.spec.nonlin);
    int x2 = tape.add(x1, apply_dense(tape, model.w2, hidden, train_mode, drop));
    return tape.matmul(tape.leaf(model.head), x2);
}

}  // namespace detail

/// Records the whole batch on the tape and returns the scalar loss node:
/// mean next-token cross-entropy over all scored positions.
template <typename T>
int build_loss(Tape<T>& tape, TinyLM<T>& model, const TokenBatch& batch, bool train_mode,
               DropoutPlan<T>& drop) {
    if (batch.batch < 1 || batch.context != model.spec.context) {
        throw ShapeError("token batch " + std::to_string(batch.batch) + "x" +
                         std::to_string(batch.context) + " does not fit context " +
                         std::to_string(model.spec.context));
    }
    for (int t : batch.tokens) {
        if (t < 0 || t >= model.spec.vocab) {
            throw DataError("token id " + std::to_string(t) + " out of range [0, " +
                            std::to_string(model.spec.vocab) + ")");
        }
    }
    const int c = batch.context;
    int mask_node = tape.constant(detail::causal_mask<T>(c));
    int total = -1;
    for (int s = 0; s < batch.batch; ++s) {
        std::vector<int> tokens(batch.sequence(s), batch.sequence(s) + c);
        int logits = detail::sequence_logits(tape, model, tokens, mask_node, train_mode, drop);
        std::vector<int> targets(size_t(c), -1);
        for (int t = 0; t + 1 < c; ++t) targets[size_t(t)] = tokens[size_t(t) + 1];
        int ce = tape.cross_entropy(logits, targets);
        total = s == 0 ? ce : tape.add(total, ce);
    }
    return tape.scale_by(total, T(1.0 / (double(batch.batch) * (c - 1))));
}

/// Eval-mode loss; deterministic, no gradients.
template <typename T>
double model_loss(TinyLM<T>& model, const TokenBatch& batch) {
    Tape<T> tape;
    DropoutPlan<T> drop;
    return double(tape.loss_value(build_loss(tape, model, batch, /*train=*/false, drop)));
}

/// Eval-mode logits for one sequence (diagnostics and causality probes).
template <typename T>
Matrix<T> model_logits(TinyLM<T>& model, const std::vector<int>& tokens) {
    if (int(tokens.size()) != model.spec.context) {
        throw ShapeError("sequence length " + std::to_string(tokens.size()) +
                         " does not fit context " + std::to_string(model.spec.context));
    }
    Tape<T> tape;
    DropoutPlan<T> drop;
    int mask_node = tape.constant(detail::causal_mask<T>(model.spec.context));
    int logits = detail::sequence_logits(tape, model, tokens, mask_node, false, drop);
    return tape.value(logits);
}

}  // namespace olora
