#pragma once

// Dual-branch vision transformer with cross-attention fusion. Branch A embeds
// the conventional stream, branch B the texture stream; after the leading
// encoder blocks the CLS of each branch queries the other branch's patch
// tokens, then re-engages its own patches through the remaining encoder
// blocks. Per-branch LayerNorm+MLP heads are summed into the logits.

#include <string>
#include <vector>

#include "texvit/backbone.hpp"

namespace texvit {

struct BranchConfig {
    int patch_size = 1;
    int embed_dim = 384;
    int depth = 8;
    int heads = 6;
    int mlp_ratio = 4;
    double drop_path_rate = 0.0;

    int head_dim() const { return embed_dim / heads; }
};

struct TexViTConfig {
    std::string preset = "custom";
    int image_size = 128;
    int num_classes = 2;
    BackboneConfig backbone;
    BranchConfig branch_a;
    BranchConfig branch_b;
    int cross_rounds = 2;

    int grid() const { return backbone.final_grid(image_size); }

    // Whole-config validation; runs before any parameter allocation.
    void validate() const {
        backbone.validate(image_size);
        if (num_classes < 2) throw ContractError("config: num_classes must be >= 2");
        if (cross_rounds < 0) throw ContractError("config: cross_rounds must be >= 0");
        const int g = grid();
        for (const BranchConfig* bc : {&branch_a, &branch_b}) {
            if (bc->embed_dim < 1 || bc->heads < 1 || bc->depth < 0 || bc->mlp_ratio < 1)
                throw ContractError("config: branch hyperparameters must be positive");
            if (bc->embed_dim % bc->heads != 0)
                throw ContractError("config: embed_dim " + std::to_string(bc->embed_dim) +
                                    " not divisible by heads " + std::to_string(bc->heads));
            if (bc->patch_size < 1 || g % bc->patch_size != 0)
                throw ContractError("config: patch size " + std::to_string(bc->patch_size) +
                                    " does not divide the " + std::to_string(g) + "x" +
                                    std::to_string(g) + " grid");
            if (bc->drop_path_rate < 0.0 || bc->drop_path_rate >= 1.0)
                throw ContractError("config: drop_path_rate must be in [0,1)");
            if (bc->depth < cross_rounds)
                throw ContractError("config: depth must be >= cross_rounds (each fusion round "
                                    "is followed by one encoder block)");
        }
    }

    static TexViTConfig preset_of(const std::string& name) {
        if (name == "paper_scale") {
            TexViTConfig cfg;
            cfg.preset = name;
            cfg.image_size = 128;
            cfg.backbone = BackboneConfig{};
            cfg.branch_a = BranchConfig{1, 384, 8, 6, 4, 0.1};
            cfg.branch_b = BranchConfig{1, 384, 8, 6, 4, 0.1};
            cfg.cross_rounds = 2;
            return cfg;
        }
        if (name == "micro") {
            TexViTConfig cfg;
            cfg.preset = name;
            cfg.image_size = 16;
            cfg.backbone.stage_channels = {8, 16, 24, 32};
            cfg.backbone.blocks_per_stage = {1, 1, 1, 1};
            cfg.backbone.small_input_mode = true;
            cfg.backbone.gram_channels = 4;
            cfg.backbone.texture_channels = 8;
            cfg.branch_a = BranchConfig{1, 32, 2, 4, 2, 0.0};
            cfg.branch_b = BranchConfig{1, 32, 2, 4, 2, 0.0};
            cfg.cross_rounds = 1;
            return cfg;
        }
        throw ContractError("unknown preset: " + name);
    }
};

namespace nn {

template <typename T>
void make_msa(ParamStore<T>& store, RngState& rng, const std::string& prefix, int64_t d) {
    make_linear(store, rng, prefix + ".q", d, d);
    // a key bias shifts every score in a row equally and cancels in the
    // softmax, so the key projection carries none
    make_linear(store, rng, prefix + ".k", d, d, false);
    make_linear(store, rng, prefix + ".v", d, d);
    make_linear(store, rng, prefix + ".o", d, d);
}

// (N,T,D) -> (N*k, T, Dh)
template <typename T>
Var<T> split_heads(Var<T> x, int64_t heads) {
    const int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
    const int64_t dh = d / heads;
    Var<T> r = reshape(x, {n, t, heads, dh});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {n * heads, t, dh});
}

// (N*k, T, Dh) -> (N,T,D)
template <typename T>
Var<T> merge_heads(Var<T> x, int64_t n, int64_t heads) {
    const int64_t t = x.dim(1), dh = x.dim(2);
    Var<T> r = reshape(x, {n, heads, t, dh});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {n, t, heads * dh});
}

// Multi-head attention with per-head scaling 1/sqrt(Dh). Queries come from
// `q_rows`, keys and values from `kv_rows`; self-attention passes the same
// sequence for both. The softmax node id is recorded for attention-row
// inspection.
template <typename T>
Var<T> attention(Ctx<T>& ctx, const std::string& prefix, Var<T> q_rows, Var<T> kv_rows,
                 int64_t heads) {
    const int64_t n = q_rows.dim(0);
    const int64_t dh = q_rows.dim(2) / heads;
    Var<T> q = split_heads(fc(ctx, prefix + ".q", q_rows), heads);
    Var<T> k = split_heads(fc(ctx, prefix + ".k", kv_rows), heads);
    Var<T> v = split_heads(fc(ctx, prefix + ".v", kv_rows), heads);
    Var<T> scores = scale(bmm_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Var<T> attn = softmax_lastdim(scores);
    ctx.tap(prefix + ".attn", attn);
    Var<T> out = merge_heads(bmm(attn, v), n, heads);
    return fc(ctx, prefix + ".o", out);
}

template <typename T>
void make_encoder_block(ParamStore<T>& store, RngState& rng, const std::string& prefix,
                        const BranchConfig& bc) {
    const int64_t d = bc.embed_dim;
    make_layernorm(store, prefix + ".ln1", d);
    make_msa(store, rng, prefix + ".attn", d);
    make_layernorm(store, prefix + ".ln2", d);
    make_linear(store, rng, prefix + ".ffn.fc1", d, d * bc.mlp_ratio);
    make_linear(store, rng, prefix + ".ffn.fc2", d * bc.mlp_ratio, d);
}

// z = x + MSA(LN(x)); out = z + FFN(LN(z)), FFN = fc -> GELU -> fc.
template <typename T>
Var<T> encoder_block(Ctx<T>& ctx, const std::string& prefix, Var<T> x, const BranchConfig& bc) {
    Var<T> h = ln(ctx, prefix + ".ln1", x);
    Var<T> msa = attention(ctx, prefix + ".attn", h, h, bc.heads);
    Var<T> z = residual_add(ctx, x, msa, bc.drop_path_rate);
    Var<T> h2 = ln(ctx, prefix + ".ln2", z);
    Var<T> f = fc(ctx, prefix + ".ffn.fc2", gelu(fc(ctx, prefix + ".ffn.fc1", h2)));
    return residual_add(ctx, z, f, bc.drop_path_rate);
}

template <typename T>
void make_patch_embed(ParamStore<T>& store, RngState& rng, const std::string& prefix,
                      int64_t in_c, int64_t grid, const BranchConfig& bc) {
    const int64_t p = bc.patch_size;
    const int64_t tokens = (grid / p) * (grid / p);
    make_linear(store, rng, prefix + ".proj", p * p * in_c, bc.embed_dim);
    fill_trunc_normal(store.create(prefix + ".cls", {1, bc.embed_dim}), 0.02, rng);
    fill_trunc_normal(store.create(prefix + ".pos", {tokens + 1, bc.embed_dim}), 0.02, rng);
}

// x0 = [cls || patches E] + E_pos; row 0 is always the CLS token.
template <typename T>
Var<T> patch_embed(Ctx<T>& ctx, const std::string& prefix, Var<T> feat, const BranchConfig& bc) {
    const int64_t n = feat.dim(0);
    Var<T> patches = unfold_patches(feat, bc.patch_size);
    Var<T> tok = fc(ctx, prefix + ".proj", patches);
    Var<T> cls = tile_leading(ctx.param(prefix + ".cls"), n); // (N,1,D)
    Var<T> x = concat(cls, tok, 1);
    return add_broadcast_leading(x, ctx.param(prefix + ".pos"));
}

template <typename T>
void make_cross_unit(ParamStore<T>& store, RngState& rng, const std::string& prefix,
                     int64_t d_src, int64_t d_dst) {
    if (d_src != d_dst) {
        make_linear(store, rng, prefix + ".bridge_in", d_src, d_dst);
        make_linear(store, rng, prefix + ".bridge_out", d_dst, d_src);
    }
    make_layernorm(store, prefix + ".ln", d_dst);
    make_msa(store, rng, prefix + ".attn", d_dst);
}

// One fusion direction: cls (N,1,Dsrc) queries patches (N,T,Ddst).
//   x1 = [cls || patches];  y = cls + MSA(LN(x1)) with q from the CLS row.
// When branch widths differ the CLS crosses through linear bridges. Passing a
// default-constructed Var as patches fuses the CLS alone (the attention row
// then has a single entry, exactly 1).
template <typename T>
Var<T> cross_attention_fuse(Ctx<T>& ctx, const std::string& prefix, Var<T> cls, Var<T> patches,
                            int64_t heads, double drop_path_rate) {
    Var<T> q_cls = cls;
    const bool bridged = ctx.store.has(prefix + ".bridge_in.w");
    if (bridged) q_cls = fc(ctx, prefix + ".bridge_in", cls);
    Var<T> x1 = q_cls;
    if (patches.id >= 0) {
        if (q_cls.dim(2) != patches.dim(2))
            throw ShapeError("cross_attention_fuse: dimension mismatch after projection: " +
                             shape_str(q_cls.shape()) + " vs " + shape_str(patches.shape()));
        x1 = concat(q_cls, patches, 1);
    }
    Var<T> h = ln(ctx, prefix + ".ln", x1);
    Var<T> q_rows = slice(h, 1, 0, 1);
    Var<T> delta = attention(ctx, prefix + ".attn", q_rows, h, heads);
    if (bridged) delta = fc(ctx, prefix + ".bridge_out", delta);
    return residual_add(ctx, cls, delta, drop_path_rate);
}

template <typename T>
void make_head(ParamStore<T>& store, RngState& rng, const std::string& prefix, int64_t d,
               int64_t classes) {
    make_layernorm(store, prefix + ".ln", d);
    make_linear(store, rng, prefix + ".fc", d, classes);
}

template <typename T>
Var<T> head(Ctx<T>& ctx, const std::string& prefix, Var<T> cls) {
    return fc(ctx, prefix + ".fc", ln(ctx, prefix + ".ln", cls));
}

} // namespace nn

template <typename T>
void build_texvit_params(const TexViTConfig& cfg, ParamStore<T>& store, uint64_t seed) {
    cfg.validate();
    RngState rng = derive_rng(seed, "init");
    build_backbone_params(cfg.backbone, store, rng);
    const int grid = cfg.grid();
    nn::make_patch_embed(store, rng, "branch_a.embed", cfg.backbone.stage_channels.back(), grid,
                         cfg.branch_a);
    nn::make_patch_embed(store, rng, "branch_b.embed", cfg.backbone.texture_stream_channels(),
                         grid, cfg.branch_b);
    for (int l = 0; l < cfg.branch_a.depth; ++l)
        nn::make_encoder_block(store, rng, "branch_a.blk" + std::to_string(l), cfg.branch_a);
    for (int l = 0; l < cfg.branch_b.depth; ++l)
        nn::make_encoder_block(store, rng, "branch_b.blk" + std::to_string(l), cfg.branch_b);
    for (int r = 0; r < cfg.cross_rounds; ++r) {
        nn::make_cross_unit(store, rng, "cross" + std::to_string(r) + ".a_from_b",
                            cfg.branch_a.embed_dim, cfg.branch_b.embed_dim);
        nn::make_cross_unit(store, rng, "cross" + std::to_string(r) + ".b_from_a",
                            cfg.branch_b.embed_dim, cfg.branch_a.embed_dim);
    }
    nn::make_head(store, rng, "head_a", cfg.branch_a.embed_dim, cfg.num_classes);
    nn::make_head(store, rng, "head_b", cfg.branch_b.embed_dim, cfg.num_classes);
}

// Full forward: backbone -> per-branch embedding -> L-cross_rounds leading
// encoder blocks -> cross_rounds rounds of (bidirectional CLS fusion + one
// encoder block per branch) -> summed per-branch heads. Deterministic given
// parameters and the context RNG.
template <typename T>
Var<T> texvit_forward(Ctx<T>& ctx, const TexViTConfig& cfg, Var<T> img) {
    FeatureStreamsV<T> streams = backbone_forward(ctx, cfg.backbone, img);
    Var<T> tok_a = nn::patch_embed(ctx, "branch_a.embed", streams.conventional, cfg.branch_a);
    Var<T> tok_b = nn::patch_embed(ctx, "branch_b.embed", streams.texture, cfg.branch_b);

    const int lead_a = cfg.branch_a.depth - cfg.cross_rounds;
    const int lead_b = cfg.branch_b.depth - cfg.cross_rounds;
    for (int l = 0; l < lead_a; ++l)
        tok_a = nn::encoder_block(ctx, "branch_a.blk" + std::to_string(l), tok_a, cfg.branch_a);
    for (int l = 0; l < lead_b; ++l)
        tok_b = nn::encoder_block(ctx, "branch_b.blk" + std::to_string(l), tok_b, cfg.branch_b);

    for (int r = 0; r < cfg.cross_rounds; ++r) {
        const int64_t ta = tok_a.dim(1) - 1, tb = tok_b.dim(1) - 1;
        Var<T> cls_a = slice(tok_a, 1, 0, 1);
        Var<T> patches_a = slice(tok_a, 1, 1, ta);
        Var<T> cls_b = slice(tok_b, 1, 0, 1);
        Var<T> patches_b = slice(tok_b, 1, 1, tb);
        // both directions read the pre-fusion snapshot
        Var<T> fused_a = nn::cross_attention_fuse(ctx, "cross" + std::to_string(r) + ".a_from_b",
                                                  cls_a, patches_b, cfg.branch_b.heads,
                                                  cfg.branch_a.drop_path_rate);
        Var<T> fused_b = nn::cross_attention_fuse(ctx, "cross" + std::to_string(r) + ".b_from_a",
                                                  cls_b, patches_a, cfg.branch_a.heads,
                                                  cfg.branch_b.drop_path_rate);
        tok_a = concat(fused_a, patches_a, 1);
        tok_b = concat(fused_b, patches_b, 1);
        tok_a = nn::encoder_block(ctx, "branch_a.blk" + std::to_string(lead_a + r), tok_a,
                                  cfg.branch_a);
        tok_b = nn::encoder_block(ctx, "branch_b.blk" + std::to_string(lead_b + r), tok_b,
                                  cfg.branch_b);
    }

    Var<T> cls_a = reshape(slice(tok_a, 1, 0, 1), {tok_a.dim(0), tok_a.dim(2)});
    Var<T> cls_b = reshape(slice(tok_b, 1, 0, 1), {tok_b.dim(0), tok_b.dim(2)});
    return add(nn::head(ctx, "head_a", cls_a), nn::head(ctx, "head_b", cls_b));
}

// Exact count of trainable scalars for a config.
inline int64_t parameter_count(const TexViTConfig& cfg) {
    ParamStore<float> store;
    build_texvit_params(cfg, store, 0);
    return store.total_parameters();
}

} // namespace texvit
