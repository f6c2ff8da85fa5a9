// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "olora/matrix.hpp"
#include "olora/rng.hpp"

namespace olora {

/// Named tensor with an optional gradient. Frozen params (trainable=false)
/// never receive gradient and are never touched by the optimizer.
template <typename T>
struct Param {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;
    bool trainable = true;

    Param() = default;
    Param(std::string n, Matrix<T> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), trainable(train) {
        grad = Matrix<T>(value.rows(), value.cols());
    }

    void zero_grad() {
        std::fill(grad.data(), grad.data() + grad.size(), T(0));
    }
};

enum class OpKind : uint8_t {
    leaf,
    constant,
    matmul,
    add,
    broadcast_add,
    nonlin,
    row_softmax,
    gather,
    cross_entropy,
    scale,
    dropout,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::constant: return "constant";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::broadcast_add: return "broadcast_add";
        case OpKind::nonlin: return "nonlin";
        case OpKind::row_softmax: return "row_softmax";
        case OpKind::gather: return "gather";
        case OpKind::cross_entropy: return "cross_entropy";
        case OpKind::scale: return "scale";
        case OpKind::dropout: return "dropout";
    }
    return "?";
}

/// Tape-based reverse-mode autodiff over the closed op set the toy model
/// needs. Values are computed eagerly as nodes are recorded (recording IS
/// the forward pass); backward() walks the record in reverse. Gradient
/// buffers exist only along paths that reach a trainable leaf, so frozen
/// weights never materialize an adjoint.
template <typename T>
class Tape {
public:
    struct Node {
        OpKind op;
        int in0 = -1;
        int in1 = -1;
        Matrix<T> value;
        Matrix<T> grad;
        bool needs_grad = false;
        Param<T>* param = nullptr;     // leaf
        T scalar = T(0);               // scale
        bool trans0 = false;           // matmul
        bool trans1 = false;
        Nonlinearity nl = Nonlinearity::gelu;
        Matrix<T> mask;                // dropout
        std::vector<int> indices;      // gather tokens / cross-entropy targets
    };

    int leaf(Param<T>& p) {
        auto it = leaf_cache_.find(&p);
        if (it != leaf_cache_.end()) return it->second;
        Node n;
        n.op = OpKind::leaf;
        n.value = p.value;
        n.param = &p;
        n.needs_grad = p.trainable;
        int id = push(std::move(n));
        leaf_cache_.emplace(&p, id);
        return id;
    }

    int constant(Matrix<T> v) {
        Node n;
        n.op = OpKind::constant;
        n.value = std::move(v);
        return push(std::move(n));
    }

    int matmul(int a, int b, bool trans_a = false, bool trans_b = false) {
        Node n;
        n.op = OpKind::matmul;
        n.in0 = a;
        n.in1 = b;
        n.trans0 = trans_a;
        n.trans1 = trans_b;
        try {
            n.value = matmul_ex(value(a), value(b), trans_a, trans_b);
        } catch (const ShapeError& e) {
            throw ShapeError(node_err("matmul", e.what()));
        }
        n.needs_grad = needs(a) || needs(b);
        return push(std::move(n));
    }

    int add(int a, int b) {
        Node n;
        n.op = OpKind::add;
        n.in0 = a;
        n.in1 = b;
        try {
            n.value = olora::add(value(a), value(b));
        } catch (const ShapeError& e) {
            throw ShapeError(node_err("add", e.what()));
        }
        n.needs_grad = needs(a) || needs(b);
        return push(std::move(n));
    }

    // a (d x n) plus a column vector bias (d x 1) applied to every column.
    int broadcast_add(int a, int bias) {
        const Matrix<T>& av = value(a);
        const Matrix<T>& bv = value(bias);
        if (bv.cols() != 1 || bv.rows() != av.rows()) {
            throw ShapeError(node_err("broadcast_add", "bias " + bv.shape() +
                                      " does not broadcast over " + av.shape()));
        }
        Node n;
        n.op = OpKind::broadcast_add;
        n.in0 = a;
        n.in1 = bias;
        n.value = av;
        for (int i = 0; i < av.rows(); ++i) {
            T b = bv(i, 0);
            T* row = n.value.row(i);
            for (int j = 0; j < av.cols(); ++j) row[j] += b;
        }
        n.needs_grad = needs(a) || needs(bias);
        return push(std::move(n));
    }

    int nonlin(int a, Nonlinearity kind) {
        const Matrix<T>& av = value(a);
        Node n;
        n.op = OpKind::nonlin;
        n.in0 = a;
        n.nl = kind;
        n.value = av;
        for (size_t i = 0; i < n.value.size(); ++i) {
            n.value.data()[i] = activate(av.data()[i], kind);
        }
        n.needs_grad = needs(a);
        return push(std::move(n));
    }

    int row_softmax(int a) {
        const Matrix<T>& av = value(a);
        Node n;
        n.op = OpKind::row_softmax;
        n.in0 = a;
        n.value = Matrix<T>(av.rows(), av.cols());
        for (int i = 0; i < av.rows(); ++i) {
            const T* x = av.row(i);
            T* p = n.value.row(i);
            T mx = x[0];
            for (int j = 1; j < av.cols(); ++j) mx = std::max(mx, x[j]);
            double sum = 0;
            for (int j = 0; j < av.cols(); ++j) {
                double e = std::exp(double(x[j]) - double(mx));
                p[j] = T(e);
                sum += e;
            }
            const T inv = T(1.0 / sum);
            for (int j = 0; j < av.cols(); ++j) p[j] *= inv;
        }
        n.needs_grad = needs(a);
        return push(std::move(n));
    }

    // Column t of the output is row tokens[t] of the table (table is V x e,
    // output is e x len(tokens)).
    int gather(int table, const std::vector<int>& tokens) {
        const Matrix<T>& tv = value(table);
        if (tokens.empty()) throw ShapeError(node_err("gather", "empty token list"));
        Node n;
        n.op = OpKind::gather;
        n.in0 = table;
        n.indices = tokens;
        n.value = Matrix<T>(tv.cols(), int(tokens.size()));
        for (size_t t = 0; t < tokens.size(); ++t) {
            const int tok = tokens[t];
            if (tok < 0 || tok >= tv.rows()) {
                throw DataError(node_err("gather", "token id " + std::to_string(tok) +
                                         " out of range [0, " + std::to_string(tv.rows()) + ")"));
            }
            for (int d = 0; d < tv.cols(); ++d) n.value(d, int(t)) = tv(tok, d);
        }
        n.needs_grad = needs(table);
        return push(std::move(n));
    }

    // Sum over scored columns of -log softmax(logits[:, t])[targets[t]].
    // targets[t] == -1 marks a column as unscored. Output is 1x1.
    int cross_entropy(int logits, const std::vector<int>& targets) {
        const Matrix<T>& lv = value(logits);
        if (int(targets.size()) != lv.cols()) {
            throw ShapeError(node_err("cross_entropy",
                                      "targets length " + std::to_string(targets.size()) +
                                      " vs logits " + lv.shape()));
        }
        Node n;
        n.op = OpKind::cross_entropy;
        n.in0 = logits;
        n.indices = targets;
        double loss = 0;
        for (int t = 0; t < lv.cols(); ++t) {
            const int y = targets[t];
            if (y < 0) continue;
            if (y >= lv.rows()) {
                throw DataError(node_err("cross_entropy", "target " + std::to_string(y) +
                                         " out of range for " + lv.shape()));
            }
            double mx = lv(0, t);
            for (int v = 1; v < lv.rows(); ++v) mx = std::max(mx, double(lv(v, t)));
            double sum = 0;
            for (int v = 0; v < lv.rows(); ++v) sum += std::exp(double(lv(v, t)) - mx);
            loss += mx + std::log(sum) - double(lv(y, t));
        }
        if (!std::isfinite(loss)) {
            throw NumericError(node_err("cross_entropy", "loss diverged (non-finite)"));
        }
        n.value = Matrix<T>(1, 1);
        n.value(0, 0) = T(loss);
        n.needs_grad = needs(logits);
        return push(std::move(n));
    }

    int scale_by(int a, T c) {
        Node n;
        n.op = OpKind::scale;
        n.in0 = a;
        n.scalar = c;
        n.value = olora::scale(value(a), c);
        n.needs_grad = needs(a);
        return push(std::move(n));
    }

    // mask entries are 0 or 1/(1-p); drawn by the caller from the run RNG.
    int dropout(int a, Matrix<T> mask) {
        const Matrix<T>& av = value(a);
        if (!same_shape(av, mask)) {
            throw ShapeError(node_err("dropout", "mask " + mask.shape() + " vs input " + av.shape()));
        }
        Node n;
        n.op = OpKind::dropout;
        n.in0 = a;
        n.mask = std::move(mask);
        n.value = av;
        for (size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] *= n.mask.data()[i];
        n.needs_grad = needs(a);
        return push(std::move(n));
    }

    const Matrix<T>& value(int id) const { return nodes_.at(size_t(id)).value; }
    size_t node_count() const { return nodes_.size(); }

    T loss_value(int id) const {
        const Matrix<T>& v = value(id);
        if (v.rows() != 1 || v.cols() != 1) {
            throw StateError("loss node must be scalar, got " + v.shape());
        }
        if (!std::isfinite(double(v(0, 0)))) {
            throw NumericError("loss diverged (non-finite)");
        }
        return v(0, 0);
    }

    /// Reverse sweep from the given scalar node. Accumulates into the grad
    /// buffers of trainable leaf params. May be called once per recording.
    void backward(int loss_id) {
        if (nodes_.empty()) {
            throw StateError("backward called before forward: tape is empty");
        }
        if (loss_id < 0 || size_t(loss_id) >= nodes_.size()) {
            throw StateError("backward: invalid loss node");
        }
        (void)loss_value(loss_id);  // must be scalar and finite

        for (auto& n : nodes_) {
            if (n.needs_grad) {
                n.grad = Matrix<T>(n.value.rows(), n.value.cols());
            }
        }
        if (!nodes_[size_t(loss_id)].needs_grad) {
            return;  // loss does not depend on any trainable param
        }
        nodes_[size_t(loss_id)].grad(0, 0) = T(1);

        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (!n.needs_grad) continue;
            const Matrix<T>& g = n.grad;
            switch (n.op) {
                case OpKind::leaf:
                case OpKind::constant:
                    break;
                case OpKind::matmul: {
                    const Matrix<T>& a = nodes_[size_t(n.in0)].value;
                    const Matrix<T>& b = nodes_[size_t(n.in1)].value;
                    if (needs(n.in0)) {
                        accum(n.in0, n.trans0 ? matmul_ex(b, g, n.trans1, true)
                                              : matmul_ex(g, b, false, !n.trans1));
                    }
                    if (needs(n.in1)) {
                        accum(n.in1, n.trans1 ? matmul_ex(g, a, true, n.trans0)
                                              : matmul_ex(a, g, !n.trans0, false));
                    }
                    break;
                }
                case OpKind::add:
                    if (needs(n.in0)) accum(n.in0, g);
                    if (needs(n.in1)) accum(n.in1, g);
                    break;
                case OpKind::broadcast_add: {
                    if (needs(n.in0)) accum(n.in0, g);
                    if (needs(n.in1)) {
                        Matrix<T>& bg = nodes_[size_t(n.in1)].grad;
                        for (int i = 0; i < g.rows(); ++i) {
                            T acc = T(0);
                            const T* row = g.row(i);
                            for (int j = 0; j < g.cols(); ++j) acc += row[j];
                            bg(i, 0) += acc;
                        }
                    }
                    break;
                }
                case OpKind::nonlin: {
                    if (!needs(n.in0)) break;
                    const Matrix<T>& x = nodes_[size_t(n.in0)].value;
                    Matrix<T>& xg = nodes_[size_t(n.in0)].grad;
                    for (size_t i = 0; i < x.size(); ++i) {
                        xg.data()[i] += g.data()[i] * activate_grad(x.data()[i], n.nl);
                    }
                    break;
                }
                case OpKind::row_softmax: {
                    if (!needs(n.in0)) break;
                    Matrix<T>& xg = nodes_[size_t(n.in0)].grad;
                    const Matrix<T>& p = n.value;
                    for (int i = 0; i < p.rows(); ++i) {
                        const T* pr = p.row(i);
                        const T* gr = g.row(i);
                        double dot = 0;
                        for (int j = 0; j < p.cols(); ++j) dot += double(gr[j]) * double(pr[j]);
                        T* xr = xg.row(i);
                        for (int j = 0; j < p.cols(); ++j) {
                            xr[j] += pr[j] * (gr[j] - T(dot));
                        }
                    }
                    break;
                }
                case OpKind::gather: {
                    if (!needs(n.in0)) break;
                    Matrix<T>& tg = nodes_[size_t(n.in0)].grad;
                    for (size_t t = 0; t < n.indices.size(); ++t) {
                        const int tok = n.indices[t];
                        for (int d = 0; d < tg.cols(); ++d) tg(tok, d) += g(d, int(t));
                    }
                    break;
                }
                case OpKind::cross_entropy: {
                    if (!needs(n.in0)) break;
                    const Matrix<T>& logits = nodes_[size_t(n.in0)].value;
                    Matrix<T>& lg = nodes_[size_t(n.in0)].grad;
                    const T gscale = g(0, 0);
                    for (int t = 0; t < logits.cols(); ++t) {
                        const int y = n.indices[t];
                        if (y < 0) continue;
                        double mx = logits(0, t);
                        for (int v = 1; v < logits.rows(); ++v) {
                            mx = std::max(mx, double(logits(v, t)));
                        }
                        double sum = 0;
                        for (int v = 0; v < logits.rows(); ++v) {
                            sum += std::exp(double(logits(v, t)) - mx);
                        }
                        for (int v = 0; v < logits.rows(); ++v) {
                            double p = std::exp(double(logits(v, t)) - mx) / sum;
                            lg(v, t) += gscale * T(p - (v == y ? 1.0 : 0.0));
                        }
                    }
                    break;
                }
                case OpKind::scale:
                    if (needs(n.in0)) accum(n.in0, olora::scale(g, n.scalar));
                    break;
                case OpKind::dropout: {
                    if (!needs(n.in0)) break;
                    Matrix<T>& xg = nodes_[size_t(n.in0)].grad;
                    for (size_t i = 0; i < g.size(); ++i) {
                        xg.data()[i] += g.data()[i] * n.mask.data()[i];
                    }
                    break;
                }
            }
        }

        for (auto& n : nodes_) {
            if (n.op == OpKind::leaf && n.param != nullptr && n.param->trainable) {
                Matrix<T>& pg = n.param->grad;
                for (size_t i = 0; i < pg.size(); ++i) pg.data()[i] += n.grad.data()[i];
            }
        }
    }

private:
    std::vector<Node> nodes_;
    std::unordered_map<Param<T>*, int> leaf_cache_;

    int push(Node&& n) {
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    bool needs(int id) const { return nodes_[size_t(id)].needs_grad; }

    void accum(int id, const Matrix<T>& g) {
        Matrix<T>& dst = nodes_[size_t(id)].grad;
        for (size_t i = 0; i < dst.size(); ++i) dst.data()[i] += g.data()[i];
    }

    std::string node_err(const char* op, const std::string& detail) const {
        return std::string(op) + " (node " + std::to_string(nodes_.size()) + "): " + detail;
    }

    static T activate(T x, Nonlinearity k) {
        if (k == Nonlinearity::relu) return x > T(0) ? x : T(0);
        const double xd = double(x);
        return T(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865475)));
    }

    static T activate_grad(T x, Nonlinearity k) {
        if (k == Nonlinearity::relu) return x > T(0) ? T(1) : T(0);
        const double xd = double(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
        const double pdf = 0.3989422804014327 * std::exp(-0.5 * xd * xd);
        return T(cdf + xd * pdf);
    }
};

/// Builds the 0 / 1/(1-p) dropout mask for one activation block.
template <typename T>
Matrix<T> dropout_mask(int rows, int cols, double p, Rng& rng) {
    Matrix<T> m(rows, cols);
    const T keep = T(1.0 / (1.0 - p));
    for (size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform() < p ? T(0) : keep;
    }
    return m;
}

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    int coords_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0;
};

/// Central-difference check of the analytic gradients already stored in the
/// params' grad buffers. `loss` must be a deterministic function of the
/// param values (fix any dropout masks before calling). Checks at least
/// min_coords coordinates per param (all of them for small params), picked
/// by descending gradient magnitude: coordinates whose gradient sits at the
/// finite-difference roundoff floor (~1e-12 for a loss of order 1) measure
/// subtraction noise rather than the backward rule, while a systematic rule
/// bug shows up on the large coordinates first.
template <typename T, typename LossFn>
GradCheckReport grad_check(const std::vector<Param<T>*>& params, LossFn&& loss, double step,
                           int min_coords = 32) {
    GradCheckReport report;
    for (Param<T>* p : params) {
        if (!p->trainable) continue;
        GradCheckEntry entry;
        entry.name = p->name;
        const size_t n = p->value.size();
        std::vector<size_t> coords(n);
        for (size_t i = 0; i < n; ++i) coords[i] = i;
        if (n > size_t(min_coords)) {
            std::stable_sort(coords.begin(), coords.end(), [&](size_t a, size_t b) {
                return std::fabs(double(p->grad.data()[a])) > std::fabs(double(p->grad.data()[b]));
            });
            coords.resize(size_t(min_coords));
        }
        for (size_t c : coords) {
            const T saved = p->value.data()[c];
            p->value.data()[c] = saved + T(step);
            const double up = double(loss());
            p->value.data()[c] = saved - T(step);
            const double down = double(loss());
            p->value.data()[c] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double an = double(p->grad.data()[c]);
            const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-8});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.coords_checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace olora
