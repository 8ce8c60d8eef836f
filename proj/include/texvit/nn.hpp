#pragma once

// Parameter builders and layer application helpers shared by the backbone and
// the transformer. Builders create named tensors in a ParamStore (two-phase:
// build once, then forward passes look parameters up by name); appliers build
// tape nodes.

#include <string>

#include "texvit/ops.hpp"
#include "texvit/rng.hpp"
#include "texvit/tape.hpp"

namespace texvit {

enum class NormKind { Batch, Layer };

inline NormKind norm_kind_from_string(const std::string& s) {
    if (s == "batch") return NormKind::Batch;
    if (s == "layer") return NormKind::Layer;
    throw ContractError("unknown norm kind: " + s);
}

inline std::string to_string(NormKind k) { return k == NormKind::Batch ? "batch" : "layer"; }

namespace nn {

// He-uniform init: U(+-sqrt(6/fan_in)).
template <typename T>
void fill_he_uniform(Tensor<T>& t, int64_t fan_in, RngState& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void fill_trunc_normal(Tensor<T>& t, double stddev, RngState& rng) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_gaussian(stddev));
}

template <typename T>
void make_conv(ParamStore<T>& store, RngState& rng, const std::string& name, int64_t out_c,
               int64_t in_c, int64_t k, bool bias) {
    fill_he_uniform(store.create(name + ".w", {out_c, in_c, k, k}), in_c * k * k, rng);
    if (bias) store.create(name + ".b", {out_c});
}

template <typename T>
Var<T> conv(Ctx<T>& ctx, const std::string& name, Var<T> x, int64_t stride, int64_t pad) {
    if (ctx.store.has(name + ".b"))
        return conv2d(x, ctx.param(name + ".w"), ctx.param(name + ".b"), stride, pad);
    return conv2d(x, ctx.param(name + ".w"), stride, pad);
}

// Norm scales start at one, shifts at zero; batch variant carries running
// stats as buffers.
template <typename T>
void make_norm(ParamStore<T>& store, const std::string& name, int64_t channels, NormKind kind) {
    store.create(name + ".gamma", {channels}).fill(T(1));
    store.create(name + ".beta", {channels});
    if (kind == NormKind::Batch) {
        store.create_buffer(name + ".running_mean", {channels});
        store.create_buffer(name + ".running_var", {channels}).fill(T(1));
        store.create_buffer(name + ".count", {1});
    }
}

template <typename T>
Var<T> norm(Ctx<T>& ctx, const std::string& name, Var<T> x, NormKind kind) {
    if (kind == NormKind::Batch)
        return batch_norm(x, ctx.param(name + ".gamma"), ctx.param(name + ".beta"),
                          ctx.store.buffer(name + ".running_mean"),
                          ctx.store.buffer(name + ".running_var"),
                          ctx.store.buffer(name + ".count"),
                          ctx.training ? NormMode::Train : NormMode::Infer);
    return group_norm_all(x, ctx.param(name + ".gamma"), ctx.param(name + ".beta"));
}

template <typename T>
void make_linear(ParamStore<T>& store, RngState& rng, const std::string& name, int64_t din,
                 int64_t dout, bool bias = true) {
    fill_he_uniform(store.create(name + ".w", {din, dout}), din, rng);
    if (bias) store.create(name + ".b", {dout});
}

template <typename T>
Var<T> fc(Ctx<T>& ctx, const std::string& name, Var<T> x) {
    if (ctx.store.has(name + ".b"))
        return linear(x, ctx.param(name + ".w"), ctx.param(name + ".b"));
    return linear(x, ctx.param(name + ".w"));
}

template <typename T>
void make_layernorm(ParamStore<T>& store, const std::string& name, int64_t d) {
    store.create(name + ".gamma", {d}).fill(T(1));
    store.create(name + ".beta", {d});
}

template <typename T>
Var<T> ln(Ctx<T>& ctx, const std::string& name, Var<T> x) {
    return layer_norm(x, ctx.param(name + ".gamma"), ctx.param(name + ".beta"));
}

// Residual add with stochastic depth. In training mode each sample's branch
// is dropped with probability `rate` and survivors are rescaled by 1/(1-rate);
// disabled in eval and whenever no RNG is attached (grad checks).
template <typename T>
Var<T> residual_add(Ctx<T>& ctx, Var<T> x, Var<T> branch, double rate) {
    if (ctx.training && ctx.rng != nullptr && rate > 0.0) {
        const int64_t b = x.dim(0);
        Tensor<T> coef({b});
        const T keep = static_cast<T>(1.0 / (1.0 - rate));
        for (int64_t i = 0; i < b; ++i)
            coef[i] = ctx.rng->uniform() < rate ? T(0) : keep;
        branch = scale_rows(branch, coef);
    }
    return add(x, branch);
}

} // namespace nn
} // namespace texvit
