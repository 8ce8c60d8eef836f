#pragma once

// ResNet-18 style backbone with Gram-matrix texture blocks. Texture features
// are computed at the input and before every down-sampling stage, aligned to
// the final grid, and channel-concatenated into the texture stream; the
// conventional stream is the final stage output.

#include <string>
#include <vector>

#include "texvit/nn.hpp"

namespace texvit {

struct BackboneConfig {
    int input_channels = 3;
    std::vector<int> stage_channels{64, 128, 256, 512};
    std::vector<int> blocks_per_stage{2, 2, 2, 2};
    // Stride-1 3x3 stem without max-pool, for inputs below 64 px.
    bool small_input_mode = false;
    // Tap 0 is the raw input; tap i >= 1 is the activation entering stage
    // i+1's stride-2 block (= stage i output).
    std::vector<int> texture_taps{0, 1, 2, 3};
    NormKind norm_kind = NormKind::Batch;
    // Width of the 1x1 channel mix ahead of the Gram stage; the Gram map is
    // gram_channels x gram_channels.
    int gram_channels = 32;
    // Per-tap output channels; the texture stream is texture_channels * taps
    // wide.
    int texture_channels = 64;

    int stages() const { return static_cast<int>(stage_channels.size()); }

    // Total spatial reduction from input to the final stage output.
    int stride_total() const {
        int s = small_input_mode ? 1 : 4; // stem conv (+ pool) in standard mode
        for (int i = 1; i < stages(); ++i) s *= 2;
        return s;
    }

    int final_grid(int image_size) const { return image_size / stride_total(); }

    void validate(int image_size) const {
        if (input_channels < 1) throw ContractError("backbone: input_channels must be >= 1");
        if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size())
            throw ContractError("backbone: stage_channels and blocks_per_stage must align");
        for (size_t i = 1; i < stage_channels.size(); ++i)
            if (stage_channels[i] <= stage_channels[i - 1])
                throw ContractError("backbone: stage_channels must be strictly increasing");
        for (int b : blocks_per_stage)
            if (b < 1) throw ContractError("backbone: blocks_per_stage entries must be >= 1");
        for (int t : texture_taps)
            if (t < 0 || t >= stages())
                throw ContractError("backbone: texture tap " + std::to_string(t) +
                                    " does not reference a down-sampling boundary");
        if (texture_taps.empty()) throw ContractError("backbone: at least one texture tap");
        if (gram_channels < 1 || texture_channels < 1)
            throw ContractError("backbone: texture widths must be >= 1");
        if (image_size % stride_total() != 0 || final_grid(image_size) < 1) {
            // locate the first stage whose stride cannot be applied
            int size = image_size;
            int divisor = small_input_mode ? 1 : 4;
            if (size % divisor != 0 || size / divisor < 1)
                throw ShapeError("backbone: input " + std::to_string(image_size) +
                                 " too small for the stem");
            size /= divisor;
            for (int i = 1; i < stages(); ++i) {
                if (size % 2 != 0 || size / 2 < 1)
                    throw ShapeError("backbone: input " + std::to_string(image_size) +
                                     " too small at stage " + std::to_string(i + 1));
                size /= 2;
            }
            throw ShapeError("backbone: input " + std::to_string(image_size) +
                             " incompatible with stride chain");
        }
    }

    int texture_stream_channels() const {
        return texture_channels * static_cast<int>(texture_taps.size());
    }
};

template <typename T>
struct FeatureStreamsV {
    Var<T> conventional; // (N, C_a, G, G) final stage output
    Var<T> texture;      // (N, C_b, G, G) concatenated texture taps
};

namespace nn {

template <typename T>
void make_basic_block(ParamStore<T>& store, RngState& rng, const std::string& prefix,
                      int64_t in_c, int64_t out_c, int64_t stride, NormKind kind) {
    make_conv(store, rng, prefix + ".conv1", out_c, in_c, 3, false);
    make_norm(store, prefix + ".norm1", out_c, kind);
    make_conv(store, rng, prefix + ".conv2", out_c, out_c, 3, false);
    make_norm(store, prefix + ".norm2", out_c, kind);
    if (stride != 1 || in_c != out_c) {
        make_conv(store, rng, prefix + ".down", out_c, in_c, 1, false);
        make_norm(store, prefix + ".down_norm", out_c, kind);
    }
}

// Two 3x3 convs with a skip; 1x1 projection skip on shape-changing blocks.
template <typename T>
Var<T> basic_block(Ctx<T>& ctx, const std::string& prefix, Var<T> x, int64_t stride,
                   NormKind kind) {
    Var<T> h = relu(norm(ctx, prefix + ".norm1", conv(ctx, prefix + ".conv1", x, stride, 1), kind));
    h = norm(ctx, prefix + ".norm2", conv(ctx, prefix + ".conv2", h, 1, 1), kind);
    Var<T> skip = x;
    if (ctx.store.has(prefix + ".down.w"))
        skip = norm(ctx, prefix + ".down_norm", conv(ctx, prefix + ".down", x, stride, 0), kind);
    return relu(add(h, skip));
}

template <typename T>
void make_texture_block(ParamStore<T>& store, RngState& rng, const std::string& prefix,
                        int64_t in_c, const BackboneConfig& cfg) {
    make_conv(store, rng, prefix + ".mix", cfg.gram_channels, in_c, 1, true);
    make_conv(store, rng, prefix + ".conv1", cfg.texture_channels, 1, 3, false);
    make_norm(store, prefix + ".norm1", cfg.texture_channels, cfg.norm_kind);
    make_conv(store, rng, prefix + ".conv2", cfg.texture_channels, cfg.texture_channels, 3, false);
    make_norm(store, prefix + ".norm2", cfg.texture_channels, cfg.norm_kind);
}

// conv -> Gram -> conv stack -> pool. The per-sample normalized Gram of the
// mixed channels is reshaped to a one-channel C x C map, convolved up to the
// tap width and average-pooled onto the target grid.
template <typename T>
Var<T> texture_block(Ctx<T>& ctx, const std::string& prefix, Var<T> feat, int64_t grid_h,
                     int64_t grid_w, const BackboneConfig& cfg) {
    if (grid_h < 1 || grid_w < 1)
        throw ShapeError("texture_block: target grid smaller than 1x1");
    const int64_t n = feat.dim(0);
    const int64_t cg = cfg.gram_channels;
    Var<T> mixed = relu(conv(ctx, prefix + ".mix", feat, 1, 0));
    Var<T> flat = reshape(mixed, {n, cg, mixed.dim(2) * mixed.dim(3)});
    Var<T> g = gram_batched(flat, true);
    Var<T> gmap = reshape(g, {n, 1, cg, cg});
    Var<T> h = relu(norm(ctx, prefix + ".norm1", conv(ctx, prefix + ".conv1", gmap, 1, 1),
                         cfg.norm_kind));
    h = relu(norm(ctx, prefix + ".norm2", conv(ctx, prefix + ".conv2", h, 1, 1), cfg.norm_kind));
    return adaptive_avg_pool2d(h, grid_h, grid_w);
}

} // namespace nn

template <typename T>
void build_backbone_params(const BackboneConfig& cfg, ParamStore<T>& store, RngState& rng) {
    const int stem_k = cfg.small_input_mode ? 3 : 7;
    nn::make_conv(store, rng, "backbone.stem.conv", cfg.stage_channels[0], cfg.input_channels,
                  stem_k, false);
    nn::make_norm(store, "backbone.stem.norm", cfg.stage_channels[0], cfg.norm_kind);
    int64_t in_c = cfg.stage_channels[0];
    for (int s = 0; s < cfg.stages(); ++s) {
        const int64_t out_c = cfg.stage_channels[static_cast<size_t>(s)];
        for (int b = 0; b < cfg.blocks_per_stage[static_cast<size_t>(s)]; ++b) {
            const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
            nn::make_basic_block(store, rng,
                                 "backbone.s" + std::to_string(s + 1) + ".b" + std::to_string(b),
                                 in_c, out_c, stride, cfg.norm_kind);
            in_c = out_c;
        }
    }
    for (int tap : cfg.texture_taps) {
        const int64_t tap_c = tap == 0 ? cfg.input_channels
                                       : cfg.stage_channels[static_cast<size_t>(tap - 1)];
        nn::make_texture_block(store, rng, "texture.t" + std::to_string(tap), tap_c, cfg);
    }
}

// Forward pass producing both streams. Taps are recorded in the context under
// "backbone.stage<i>" and "texture.t<i>" for Grad-CAM.
template <typename T>
FeatureStreamsV<T> backbone_forward(Ctx<T>& ctx, const BackboneConfig& cfg, Var<T> img) {
    if (img.rank() != 4 || img.dim(1) != cfg.input_channels)
        throw ShapeError("backbone: expected (N," + std::to_string(cfg.input_channels) +
                         ",H,W) input, got " + shape_str(img.shape()));
    cfg.validate(static_cast<int>(img.dim(2)));
    if (img.dim(2) != img.dim(3))
        throw ShapeError("backbone: expected square input, got " + shape_str(img.shape()));
    const int grid = cfg.final_grid(static_cast<int>(img.dim(2)));

    std::vector<Var<T>> tap_feats(static_cast<size_t>(cfg.stages()));
    tap_feats[0] = img;
    ctx.tap("backbone.input", img);

    Var<T> x;
    if (cfg.small_input_mode) {
        x = relu(nn::norm(ctx, "backbone.stem.norm",
                          nn::conv(ctx, "backbone.stem.conv", img, 1, 1), cfg.norm_kind));
    } else {
        x = relu(nn::norm(ctx, "backbone.stem.norm",
                          nn::conv(ctx, "backbone.stem.conv", img, 2, 3), cfg.norm_kind));
        x = pool2d(x, PoolKind::Max, 2, 2);
    }
    for (int s = 0; s < cfg.stages(); ++s) {
        for (int b = 0; b < cfg.blocks_per_stage[static_cast<size_t>(s)]; ++b) {
            const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
            x = nn::basic_block(ctx, "backbone.s" + std::to_string(s + 1) + ".b" + std::to_string(b),
                                x, stride, cfg.norm_kind);
        }
        ctx.tap("backbone.stage" + std::to_string(s + 1), x);
        if (s + 1 < cfg.stages()) tap_feats[static_cast<size_t>(s + 1)] = x;
    }

    Var<T> tex;
    bool first = true;
    for (int tap : cfg.texture_taps) {
        Var<T> t = nn::texture_block(ctx, "texture.t" + std::to_string(tap),
                                     tap_feats[static_cast<size_t>(tap)], grid, grid, cfg);
        ctx.tap("texture.t" + std::to_string(tap), t);
        tex = first ? t : concat(tex, t, 1);
        first = false;
    }
    return {x, tex};
}

} // namespace texvit
