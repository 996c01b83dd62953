#pragma once

// Adam with decoupled weight decay plus global-norm gradient clipping,
// operating on named parameter collections from the autodiff tape.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "rlt4rec/tensor.hpp"
#include "rlt4rec/util.hpp"

namespace rlt4rec::diff {

template <typename S>
struct NamedParamT {
    std::string name;
    TensorPtrT<S> tensor;
};

template <typename S>
using ParamListT = std::vector<NamedParamT<S>>;

using NamedParam = NamedParamT<float>;
using ParamList = ParamListT<float>;

template <typename S>
struct AdamStateT {
    std::vector<std::vector<S>> m;  // first-moment estimates, one per parameter
    std::vector<std::vector<S>> v;  // second-moment estimates
    long step = 0;

    static AdamStateT make(const ParamListT<S>& params) {
        AdamStateT st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& p : params) {
            st.m.emplace_back(p.tensor->numel(), S(0));
            st.v.emplace_back(p.tensor->numel(), S(0));
        }
        return st;
    }
};

using AdamState = AdamStateT<float>;

struct AdamOptions {
    double lr = 1e-3;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Scales all gradients jointly so their Euclidean norm is at most max_norm.
// Returns the pre-clip joint norm. Idempotent.
template <typename S>
double clip_global_norm(ParamListT<S>& params, double max_norm = 1.0) {
    if (max_norm <= 0.0) {
        fail("clip_global_norm: max_norm must be positive");
    }
    double sq = 0.0;
    for (const auto& p : params) {
        for (S g : p.tensor->grad) {
            if (!std::isfinite(static_cast<double>(g))) {
                fail(cat("clip_global_norm: non-finite gradient in parameter '", p.name, "'"));
            }
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        // Shade the scale slightly below the exact ratio so the rescaled norm
        // lands strictly under max_norm despite rounding; a second clip is
        // then a no-op, making the operation idempotent.
        const double shade = 1.0 - 8.0 * static_cast<double>(std::numeric_limits<S>::epsilon());
        const S s = static_cast<S>(max_norm / norm * shade);
        for (auto& p : params) {
            for (S& g : p.tensor->grad) {
                g *= s;
            }
        }
    }
    return norm;
}

// Bias-corrected Adam step over params' accumulated gradients. Weight decay
// is decoupled: p -= lr*wd*p before the adaptive update.
template <typename S>
void adam_step(ParamListT<S>& params, AdamStateT<S>& state, const AdamOptions& opt = {}) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        fail(cat("adam_step: state tracks ", state.m.size(), " parameters, got ", params.size()));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& t = *params[k].tensor;
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != t.numel() || t.grad.size() != t.numel()) {
            fail(cat("adam_step: shape mismatch for parameter '", params[k].name, "'"));
        }
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double g = static_cast<double>(t.grad[i]);
            double p = static_cast<double>(t.data[i]);
            p -= opt.lr * opt.weight_decay * p;
            double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * g;
            double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * g * g;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
            if (!std::isfinite(p)) {
                fail(cat("adam_step: non-finite update for parameter '", params[k].name, "'"));
            }
            t.data[i] = static_cast<S>(p);
        }
    }
}

}  // namespace rlt4rec::diff
