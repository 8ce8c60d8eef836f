#pragma once

// Training loss and the Adam optimizer.

#include <string>
#include <unordered_map>

#include "texvit/ops.hpp"

namespace texvit {

// Soft-target cross entropy, computed in log space:
//   -(1/B) sum_b sum_c target[b,c] * log softmax(logits[b])_c
// Targets are constants (no gradient flows into them) and must each sum to 1.
template <typename T>
Var<T> cross_entropy_mean(Ctx<T>& ctx, Var<T> logits, const Tensor<T>& targets) {
    require_same_shape(logits.val(), targets, "cross_entropy");
    const int64_t b = logits.dim(0), c = logits.dim(1);
    for (int64_t i = 0; i < b; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double v = static_cast<double>(targets[i * c + j]);
            if (v < 0.0) throw ContractError("cross_entropy: negative target weight");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-4)
            throw ContractError("cross_entropy: target row does not sum to 1");
    }
    Var<T> ls = log_softmax_lastdim(logits);
    Var<T> weighted = mul(ls, ctx.input(targets));
    return scale(sum_all(weighted), static_cast<T>(-1.0 / static_cast<double>(b)));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moment accumulators plus the shared step counter.
template <typename T>
struct AdamState {
    int64_t t = 0;
    std::unordered_map<std::string, Tensor<T>> m;
    std::unordered_map<std::string, Tensor<T>> v;

    void ensure(const ParamStore<T>& params) {
        for (const auto& name : params.names()) {
            if (!m.count(name)) m.emplace(name, Tensor<T>(params.value(name).shape()));
            if (!v.count(name)) v.emplace(name, Tensor<T>(params.value(name).shape()));
        }
    }
};

// Standard bias-corrected update: theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
// The step counter increments exactly once per call.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const AdamConfig& cfg) {
    state.ensure(params);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (const auto& name : params.names()) {
        Tensor<T>& theta = params.value(name);
        const Tensor<T>& g = params.grad(name);
        require_same_shape(theta, g, "adam_step");
        Tensor<T>& m = state.m.at(name);
        Tensor<T>& v = state.v.at(name);
        for (int64_t i = 0; i < theta.numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            theta[i] = static_cast<T>(static_cast<double>(theta[i]) -
                                      lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps));
        }
    }
}

} // namespace texvit
