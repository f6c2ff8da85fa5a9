// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "olora/autograd.hpp"
#include "olora/matrix.hpp"

namespace olora {

/// AdamW with decoupled weight decay over a fixed registry of trainable
/// params. Moment buffers are allocated for registered params only, so the
/// optimizer cannot touch anything that was not explicitly handed to it.
template <typename T>
class AdamW {
public:
    struct Options {
        double lr = 3e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.1;
    };

    AdamW(std::vector<Param<T>*> params, Options opt) : params_(std::move(params)), opt_(opt) {
        for (Param<T>* p : params_) {
            if (!p->trainable) {
                throw ConfigError("optimizer registry contains frozen param '" + p->name + "'");
            }
            m_.emplace_back(p->value.rows(), p->value.cols());
            v_.emplace_back(p->value.rows(), p->value.cols());
        }
    }

    void zero_grad() {
        for (Param<T>* p : params_) p->zero_grad();
    }

    /// One update; returns the number of scalar parameters moved.
    size_t step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
        size_t moved = 0;
        for (size_t i = 0; i < params_.size(); ++i) {
            Param<T>& p = *params_[i];
            if (!same_shape(p.grad, p.value)) {
                throw StateError("gradient missing for param '" + p.name + "'");
            }
            T* theta = p.value.data();
            const T* g = p.grad.data();
            T* m = m_[i].data();
            T* v = v_[i].data();
            const size_t n = p.value.size();
            for (size_t j = 0; j < n; ++j) {
                const double gj = double(g[j]);
                const double mj = opt_.beta1 * double(m[j]) + (1.0 - opt_.beta1) * gj;
                const double vj = opt_.beta2 * double(v[j]) + (1.0 - opt_.beta2) * gj * gj;
                m[j] = T(mj);
                v[j] = T(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                const double update =
                    mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * double(theta[j]);
                theta[j] = T(double(theta[j]) - opt_.lr * update);
            }
            moved += n;
        }
        return moved;
    }

    int64_t step_count() const { return t_; }
    size_t registered_scalar_count() const {
        size_t n = 0;
        for (const Param<T>* p : params_) n += p->value.size();
        return n;
    }
    const Options& options() const { return opt_; }

private:
    std::vector<Param<T>*> params_;
    Options opt_;
    std::vector<Matrix<T>> m_;
    std::vector<Matrix<T>> v_;
    int64_t t_ = 0;
};

}  // namespace olora
