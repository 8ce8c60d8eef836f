// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier end-to-end checks (the synthetic-corpus training
// run) live here rather than in the unit suites.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "texvit/texvit.hpp"

#include "support/oracles.hpp"

using namespace texvit;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    bool pass = false;
    std::string detail;
};

std::vector<Criterion> g_results;

void record(const std::string& name, bool pass, const std::string& detail) {
    g_results.push_back({name, pass, detail});
    std::printf("[%s] %-24s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "texvit_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

// ---------------------------------------------------------------------------
// Gradient fidelity: every primitive op and the end-to-end micro model match
// central finite differences at 64-bit, rel err <= 1e-4, on one CPU core in
// <= 60 s.
void check_gradient_fidelity() {
    ThreadPool::instance().set_threads(1);
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_name;
    const auto op_results = gradsuite::run_all(20, 0xACCE97u);
    for (const auto& r : op_results) {
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
    }
    const int op_count = static_cast<int>(op_results.size());
    TexViTConfig cfg = TexViTConfig::preset_of("micro");
    ParamStore<double> store;
    build_texvit_params(cfg, store, 7);
    RngState data_rng(13);
    Tensor<double> img = rng_uniform<double>(data_rng, {2, 3, cfg.image_size, cfg.image_size});
    Tensor<double> target({2, 2}, {1.0, 0.0, 0.0, 1.0});
    auto eval_fn = [&](bool with_grad) {
        Tape<double> tape(with_grad);
        Ctx<double> ctx{tape, store};
        ctx.training = true;
        Var<double> loss = cross_entropy_mean(ctx, texvit_forward(ctx, cfg, ctx.input(img)), target);
        if (with_grad) {
            store.zero_grads();
            tape.backward(loss.id);
            ctx.collect_grads();
        }
        return loss.val()[0];
    };
    RngState probe_rng(29);
    GradCheckReport e2e = grad_check<double>(eval_fn, store, 30, 1e-5, probe_rng);
    if (e2e.max_rel_err > worst) {
        worst = e2e.max_rel_err;
        worst_name = "texvit-micro (" + e2e.worst_param + ")";
    }
    const double elapsed = seconds_since(t0);
    ThreadPool::instance().set_threads(
        static_cast<int>(std::thread::hardware_concurrency()));
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "%d ops x 20 instances + end-to-end micro: worst %.3e (%s), %.1f s single core",
                  op_count, worst, worst_name.c_str(), elapsed);
    record("gradient-fidelity", worst <= 1e-4 && elapsed <= 60.0, detail);
}

// ---------------------------------------------------------------------------
// Gram properties: exact symmetry, spatial-permutation invariance, degree-2
// homogeneity, x^T G x >= -1e-6 trace(G) on 100 random instances.
void check_gram_properties() {
    RngState rng(41);
    bool symmetric = true, invariant = true, homogeneous = true, psd = true;
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t c = 2 + rng.uniform_int(8), m = 1 + rng.uniform_int(24);
        Tensor<float> f = rng_uniform<float>(rng, {1, c, m}, -2.0, 2.0);
        Tape<float> tape;
        Var<float> fv{&tape, tape.add_leaf(f, false)};
        const Tensor<float>& g = gram_batched(fv, false).val();
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < c; ++j)
                symmetric = symmetric && g.at({0, i, j}) == g.at({0, j, i});
        // permutation invariance (reversal is a permutation)
        Tensor<float> fr({1, c, m});
        for (int64_t i = 0; i < c; ++i)
            for (int64_t k = 0; k < m; ++k) fr.at({0, i, m - 1 - k}) = f.at({0, i, k});
        Var<float> frv{&tape, tape.add_leaf(fr, false)};
        const Tensor<float>& gr = gram_batched(frv, false).val();
        for (int64_t i = 0; i < g.numel(); ++i)
            invariant = invariant && std::abs(gr[i] - g[i]) <= 1e-5f * std::max(1.0f, std::abs(g[i]));
        // x -> 2x multiplies raw G by exactly 4
        Tensor<float> f2 = f;
        for (int64_t i = 0; i < f2.numel(); ++i) f2[i] *= 2.0f;
        Var<float> f2v{&tape, tape.add_leaf(f2, false)};
        const Tensor<float>& g2 = gram_batched(f2v, false).val();
        for (int64_t i = 0; i < g.numel(); ++i) homogeneous = homogeneous && g2[i] == 4.0f * g[i];
        // quadratic form
        double trace = 0.0;
        for (int64_t i = 0; i < c; ++i) trace += g.at({0, i, i});
        Tensor<float> x = rng_uniform<float>(rng, {c}, -1.0, 1.0);
        double quad = 0.0;
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < c; ++j) quad += x[i] * g.at({0, i, j}) * x[j];
        psd = psd && quad >= -1e-6 * trace;
    }
    record("gram-properties", symmetric && invariant && homogeneous && psd,
           std::string("symmetry ") + (symmetric ? "exact" : "BROKEN") + ", permutation " +
               (invariant ? "invariant" : "BROKEN") + ", homogeneity " +
               (homogeneous ? "exact x4" : "BROKEN") + ", quadratic form >= -1e-6 trace on 100");
}

// ---------------------------------------------------------------------------
// Attention normalization: every self- and cross-attention row sums to 1
// within 1e-6 on randomized configs; zeroed output projections give exact
// residual identities.
void check_attention_normalization() {
    RngState rng(42);
    bool rows_ok = true, identity_ok = true;
    int rows_checked = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t heads = 1 + rng.uniform_int(4);
        const int64_t d = heads * (2 + rng.uniform_int(6));
        BranchConfig bc{1, static_cast<int>(d), 1, static_cast<int>(heads), 2, 0.0};
        ParamStore<float> store;
        RngState init = derive_rng(100 + static_cast<uint64_t>(trial), "init");
        nn::make_encoder_block(store, init, "blk", bc);
        nn::make_cross_unit(store, init, "xu", d, d);
        Tape<float> tape;
        Ctx<float> ctx{tape, store};
        const int64_t t = 2 + rng.uniform_int(9);
        const int64_t b = 1 + rng.uniform_int(3);
        nn::encoder_block(ctx, "blk", ctx.input(rng_uniform<float>(rng, {b, t, d}, -3.0, 3.0)),
                          bc);
        nn::cross_attention_fuse(ctx, "xu", ctx.input(rng_uniform<float>(rng, {b, 1, d})),
                                 ctx.input(rng_uniform<float>(rng, {b, t, d})), heads, 0.0);
        for (const auto& [name, id] : ctx.taps) {
            const Tensor<float>& attn = tape.value(id);
            const int64_t cols = attn.shape().back();
            for (int64_t r = 0; r < attn.numel() / cols; ++r) {
                double s = 0.0;
                for (int64_t j = 0; j < cols; ++j) s += attn[r * cols + j];
                rows_ok = rows_ok && std::abs(s - 1.0) <= 1e-6;
                ++rows_checked;
            }
        }
        // residual identity
        store.value("blk.attn.o.w").fill(0.0f);
        store.value("blk.attn.o.b").fill(0.0f);
        store.value("blk.ffn.fc2.w").fill(0.0f);
        store.value("blk.ffn.fc2.b").fill(0.0f);
        store.value("xu.attn.o.w").fill(0.0f);
        store.value("xu.attn.o.b").fill(0.0f);
        Tape<float> tape2;
        Ctx<float> ctx2{tape2, store};
        Tensor<float> x = rng_uniform<float>(rng, {b, t, d}, -1.0, 1.0);
        Var<float> out = nn::encoder_block(ctx2, "blk", ctx2.input(x), bc);
        for (int64_t i = 0; i < x.numel(); ++i) identity_ok = identity_ok && out.val()[i] == x[i];
        Tensor<float> cls = rng_uniform<float>(rng, {b, 1, d}, -1.0, 1.0);
        Var<float> fused = nn::cross_attention_fuse(ctx2, "xu", ctx2.input(cls),
                                                    ctx2.input(rng_uniform<float>(rng, {b, t, d})),
                                                    heads, 0.0);
        for (int64_t i = 0; i < cls.numel(); ++i)
            identity_ok = identity_ok && fused.val()[i] == cls[i];
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "%d attention rows sum to 1 +-1e-6; zeroed projections are exact identities",
                  rows_checked);
    record("attention-normalization", rows_ok && identity_ok, detail);
}

// ---------------------------------------------------------------------------
// Oracle equivalence: conv2d / matmul / pool2d / patch_embed against
// brute-force loop oracles on 50 random instances each, within 1e-6.
void check_oracle_equivalence() {
    RngState rng(43);
    double worst = 0.0;
    auto track = [&](double err) { worst = std::max(worst, err); };

    for (int trial = 0; trial < 50; ++trial) {
        Tape<float> tape;
        { // matmul
            const int64_t m = 1 + rng.uniform_int(6), k = 1 + rng.uniform_int(6),
                          n = 1 + rng.uniform_int(6);
            Tensor<float> a = rng_uniform<float>(rng, {m, k}, -1.0, 1.0);
            Tensor<float> b = rng_uniform<float>(rng, {k, n}, -1.0, 1.0);
            Var<float> av{&tape, tape.add_leaf(a, false)}, bv{&tape, tape.add_leaf(b, false)};
            const Tensor<float>& got = matmul(av, bv).val();
            Tensor<float> want = oracle::matmul(a, b);
            for (int64_t i = 0; i < got.numel(); ++i) track(std::abs(got[i] - want[i]));
        }
        { // conv2d
            const int64_t n = 1 + rng.uniform_int(2), c = 1 + rng.uniform_int(3),
                          o = 1 + rng.uniform_int(3);
            const int64_t h = 3 + rng.uniform_int(6), w = 3 + rng.uniform_int(6);
            const int64_t k = 1 + rng.uniform_int(3);
            const int64_t stride = 1 + rng.uniform_int(2), pad = rng.uniform_int(2);
            Tensor<float> x = rng_uniform<float>(rng, {n, c, h, w}, -1.0, 1.0);
            Tensor<float> wt = rng_uniform<float>(rng, {o, c, k, k}, -1.0, 1.0);
            std::vector<float> bias(static_cast<size_t>(o));
            for (auto& v : bias) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            Var<float> xv{&tape, tape.add_leaf(x, false)}, wv{&tape, tape.add_leaf(wt, false)};
            Var<float> bv{&tape, tape.add_leaf(Tensor<float>({o}, bias), false)};
            const Tensor<float>& got = conv2d(xv, wv, bv, stride, pad).val();
            Tensor<float> want = oracle::conv2d(x, wt, bias, stride, pad);
            for (int64_t i = 0; i < got.numel(); ++i) track(std::abs(got[i] - want[i]));
        }
        { // pool2d
            const int64_t h = 3 + rng.uniform_int(6);
            const int64_t k = 1 + rng.uniform_int(h), s = 1 + rng.uniform_int(2);
            Tensor<float> x = rng_uniform<float>(rng, {2, 2, h, h}, -1.0, 1.0);
            Var<float> xv{&tape, tape.add_leaf(x, false)};
            for (bool is_max : {true, false}) {
                const Tensor<float>& got =
                    pool2d(xv, is_max ? PoolKind::Max : PoolKind::Avg, k, s).val();
                Tensor<float> want = oracle::pool2d(x, is_max, k, s);
                for (int64_t i = 0; i < got.numel(); ++i) track(std::abs(got[i] - want[i]));
            }
        }
        { // patch_embed
            const int64_t p = 1 + rng.uniform_int(2);
            const int64_t grid = p * (1 + rng.uniform_int(3));
            const int64_t c = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(6);
            BranchConfig bc{static_cast<int>(p), static_cast<int>(d), 1, 1, 2, 0.0};
            ParamStore<float> store;
            RngState init = derive_rng(200 + static_cast<uint64_t>(trial), "init");
            nn::make_patch_embed(store, init, "emb", c, grid, bc);
            Ctx<float> ctx{tape, store};
            Tensor<float> feat = rng_uniform<float>(rng, {1, c, grid, grid}, -1.0, 1.0);
            const Tensor<float>& got = nn::patch_embed(ctx, "emb", ctx.input(feat), bc).val();
            Tensor<float> sample({c, grid, grid});
            for (int64_t i = 0; i < sample.numel(); ++i) sample[i] = feat[i];
            std::vector<float> bias(store.value("emb.proj.b").data(),
                                    store.value("emb.proj.b").data() + d);
            Tensor<float> tokens = oracle::patch_embed(sample, store.value("emb.proj.w"), bias, p);
            const auto& pos = store.value("emb.pos");
            const int64_t t_cnt = (grid / p) * (grid / p);
            for (int64_t t = 0; t < t_cnt; ++t)
                for (int64_t j = 0; j < d; ++j)
                    track(std::abs(got.at({0, t + 1, j}) - (tokens.at({t, j}) + pos.at({t + 1, j}))));
        }
    }
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "conv2d/matmul/pool2d/patch_embed vs loop oracles, 50 instances each: max |d| %.2e",
                  worst);
    record("oracle-equivalence", worst <= 1e-6, detail);
}

// ---------------------------------------------------------------------------
// Metrics: rank-statistic AUC equals the ROC trapezoid within 1e-9 on 100
// random instances; the worked example gives 0.75 exactly.
void check_metrics() {
    RngState rng(44);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores = {rng.uniform(), rng.uniform()};
        std::vector<int> labels = {0, 1};
        const int n = 4 + static_cast<int>(rng.uniform_int(60));
        for (int i = 0; i < n; ++i) {
            scores.push_back(static_cast<double>(rng.uniform_int(12)) / 12.0);
            labels.push_back(static_cast<int>(rng.uniform_int(2)));
        }
        const double mw = mann_whitney_auc(scores, labels);
        const double trap = trapezoid_auc(roc_curve(scores, labels));
        const double pair = oracle::auc_pairwise(scores, labels);
        worst = std::max({worst, std::abs(mw - trap), std::abs(mw - pair)});
    }
    MetricsReport example = compute_metrics({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    const bool example_ok = example.auc_defined && example.auc == 0.75;
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "AUC rank vs trapezoid vs pairwise: max |d| %.2e on 100; worked example %s 0.75",
                  worst, example_ok ? "=" : "!=");
    record("metrics", worst <= 1e-9 && example_ok, detail);
}

// ---------------------------------------------------------------------------
// Parameter budget: paper_scale within +-10% of 43M.
void check_parameter_budget() {
    const int64_t count = parameter_count(TexViTConfig::preset_of("paper_scale"));
    char detail[128];
    std::snprintf(detail, sizeof(detail), "paper_scale = %lld parameters, window [38.7e6, 47.3e6]",
                  static_cast<long long>(count));
    record("parameter-budget", count >= 38'700'000 && count <= 47'300'000, detail);
}

// ---------------------------------------------------------------------------
// The smooth-vs-textured proxy experiment (shared corpus for the corruption
// criterion below).
struct ProxyArtifacts {
    DatasetManifest train, val, test;
    Checkpoint ckpt;
    bool trained = false;
};

ProxyArtifacts g_proxy;

void build_proxy_corpus() {
    const fs::path dir = work_dir() / "proxy";
    SynthResult r = synth_texture_dataset(2700, 32, 2.0, 20260810, dir.string());
    // deterministic stratified re-slice into 2000 train / 200 val / 500 test
    std::vector<ManifestEntry> by_class[2];
    for (const auto* part : {&r.train, &r.val, &r.test})
        for (const auto& e : part->entries) by_class[e.label].push_back(e);
    auto take = [&](int from_each, const std::string& split) {
        DatasetManifest m;
        m.root = dir.string();
        m.split = split;
        for (auto& cls : by_class)
            for (int i = 0; i < from_each; ++i) {
                m.entries.push_back(cls.back());
                cls.pop_back();
            }
        return m;
    };
    g_proxy.train = take(1000, "train");
    g_proxy.val = take(100, "val");
    g_proxy.test = take(250, "test");
}

void check_proxy_experiment() {
    const auto t0 = std::chrono::steady_clock::now();
    build_proxy_corpus();

    TexViTConfig cfg = TexViTConfig::preset_of("micro");
    cfg.image_size = 32;
    TrainConfig tc;
    tc.learning_rate = 0.01; // the stated settings: lr 0.01, batch 64, Adam
    tc.batch_size = 64;
    tc.epochs = 20;
    tc.seed = 20260810;
    tc.use_mixup = tc.use_cutmix = tc.use_randaug = tc.use_random_erase = false;
    g_proxy.ckpt = train(cfg, tc, g_proxy.train, g_proxy.val);
    g_proxy.trained = true;
    CorruptionSpec none;
    MetricsReport report = evaluate(g_proxy.ckpt, g_proxy.test, none);
    const double elapsed = seconds_since(t0);

    // Gram-feature-only linear baseline: normalized Gram (Eq.-i) of the fixed
    // feature stack {R,G,B, dx(R..B), dy(R..B)}, upper triangle, logistic
    // regression trained with the same Adam.
    auto gram_features = [](const Tensor<float>& img) {
        const int64_t h = img.dim(1) - 1, w = img.dim(2) - 1;
        const int64_t c = 9, m = h * w;
        Tensor<float> f({c, m});
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const float v = img.at({ch, y, x});
                    f.at({ch, y * w + x}) = v;
                    f.at({3 + ch, y * w + x}) = img.at({ch, y, x + 1}) - v;
                    f.at({6 + ch, y * w + x}) = img.at({ch, y + 1, x}) - v;
                }
        Tensor<float> g = oracle::gram(f, true);
        std::vector<float> feats;
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = i; j < c; ++j) feats.push_back(g.at({i, j}));
        return feats;
    };
    LoadedDataset train_data = LoadedDataset::from_manifest(g_proxy.train);
    LoadedDataset test_data = LoadedDataset::from_manifest(g_proxy.test);
    const int64_t n_feat = 45;
    Tensor<float> xtr({train_data.size(), n_feat}), xte({test_data.size(), n_feat});
    for (int64_t i = 0; i < train_data.size(); ++i) {
        auto f = gram_features(train_data.images[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < n_feat; ++j) xtr.at({i, j}) = f[static_cast<size_t>(j)];
    }
    for (int64_t i = 0; i < test_data.size(); ++i) {
        auto f = gram_features(test_data.images[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < n_feat; ++j) xte.at({i, j}) = f[static_cast<size_t>(j)];
    }
    // standardize features on the training set
    for (int64_t j = 0; j < n_feat; ++j) {
        double mean = 0.0;
        for (int64_t i = 0; i < train_data.size(); ++i) mean += xtr.at({i, j});
        mean /= static_cast<double>(train_data.size());
        double var = 0.0;
        for (int64_t i = 0; i < train_data.size(); ++i) {
            const double d = xtr.at({i, j}) - mean;
            var += d * d;
        }
        const double inv = 1.0 / std::sqrt(var / static_cast<double>(train_data.size()) + 1e-12);
        for (int64_t i = 0; i < train_data.size(); ++i)
            xtr.at({i, j}) = static_cast<float>((xtr.at({i, j}) - mean) * inv);
        for (int64_t i = 0; i < test_data.size(); ++i)
            xte.at({i, j}) = static_cast<float>((xte.at({i, j}) - mean) * inv);
    }
    ParamStore<float> probe;
    probe.create("w", {n_feat, 2});
    probe.create("b", {2});
    Tensor<float> targets({train_data.size(), 2});
    for (int64_t i = 0; i < train_data.size(); ++i) {
        targets.at({i, 0}) = train_data.labels[static_cast<size_t>(i)] == 0 ? 1.0f : 0.0f;
        targets.at({i, 1}) = 1.0f - targets.at({i, 0});
    }
    AdamState<float> adam;
    for (int step = 0; step < 300; ++step) {
        Tape<float> tape;
        Ctx<float> ctx{tape, probe};
        Var<float> logits = linear(ctx.input(xtr), ctx.param("w"), ctx.param("b"));
        Var<float> loss = cross_entropy_mean(ctx, logits, targets);
        probe.zero_grads();
        tape.backward(loss.id);
        ctx.collect_grads();
        adam_step(probe, adam, 0.05, AdamConfig{});
    }
    int64_t correct = 0;
    {
        Tape<float> tape(false);
        Ctx<float> ctx{tape, probe};
        Var<float> logits = linear(ctx.input(xte), ctx.param("w"), ctx.param("b"));
        for (int64_t i = 0; i < test_data.size(); ++i) {
            const int pred = logits.val().at({i, 1}) > logits.val().at({i, 0}) ? 1 : 0;
            correct += pred == test_data.labels[static_cast<size_t>(i)] ? 1 : 0;
        }
    }
    const double probe_acc = static_cast<double>(correct) / static_cast<double>(test_data.size());

    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "2000 train / 500 test @32px, lr 0.01 batch 64 Adam, %d epochs: test acc %.4f "
                  "(>=0.95), Gram linear probe %.4f (>=0.85), %.0f s (budget 900)",
                  tc.epochs, report.accuracy, probe_acc, elapsed);
    record("proxy-experiment",
           report.accuracy >= 0.95 && probe_acc >= 0.85 && elapsed <= 900.0, detail);
}

// ---------------------------------------------------------------------------
// Corruption signatures: blur kernel and impulse response, noise delta
// statistics, compression energy reduction, and the 4-row corruption grid.
void check_corruption_signatures() {
    bool ok = true;
    std::string notes;

    auto w1 = corrupt_detail::gaussian_kernel_1d(7, 25.0);
    double ksum = 0.0;
    for (double v : w1) ksum += v;
    ok = ok && std::abs(ksum - 1.0) <= 1e-9;

    Tensor<float> impulse({3, 15, 15});
    for (int c = 0; c < 3; ++c) impulse.at({c, 7, 7}) = 1.0f;
    Tensor<float> resp = gaussian_blur(impulse, 7, 25.0);
    float lo = 1.0f, hi = 0.0f;
    for (int64_t y = 4; y <= 10; ++y)
        for (int64_t x = 4; x <= 10; ++x) {
            lo = std::min(lo, resp.at({0, y, x}));
            hi = std::max(hi, resp.at({0, y, x}));
        }
    ok = ok && lo >= 0.0202f && hi <= 0.0206f;

    RngState nrng(45);
    Tensor<float> base = rng_uniform<float>(nrng, {3, 128, 128});
    RngState noise_rng(46);
    Tensor<float> noisy = add_noise(base, 0.0, 0.2, noise_rng);
    double sum = 0.0, sq = 0.0;
    for (int64_t i = 0; i < base.numel(); ++i) {
        const double d = static_cast<double>(noisy[i]) - base[i];
        sum += d;
        sq += d * d;
    }
    const double mean = sum / static_cast<double>(base.numel());
    const double stddev = std::sqrt(sq / static_cast<double>(base.numel()) - mean * mean);
    ok = ok && std::abs(mean) <= 0.01 && std::abs(stddev - 0.2) <= 0.01;

    // compression reduces top-quartile DCT energy on corpus-statistics noise
    Tensor<float> tex = rng_gaussian<float>(nrng, {3, 32, 32}, 0.5, 0.15);
    for (int64_t i = 0; i < tex.numel(); ++i) tex[i] = std::min(1.0f, std::max(0.0f, tex[i]));
    auto hf_energy = [](const Tensor<float>& img) {
        double energy = 0.0;
        double block[64], coef[64];
        for (int64_t c = 0; c < img.dim(0); ++c)
            for (int64_t by = 0; by + 8 <= img.dim(1); by += 8)
                for (int64_t bx = 0; bx + 8 <= img.dim(2); bx += 8) {
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x)
                            block[y * 8 + x] = img.at({c, by + y, bx + x}) * 255.0 - 128.0;
                    corrupt_detail::dct8x8(block, coef, false);
                    for (int u = 0; u < 8; ++u)
                        for (int v = 0; v < 8; ++v)
                            if (u * u + v * v >= 52) // top-quartile frequencies (16 of 64)
                                energy += coef[u * 8 + v] * coef[u * 8 + v];
                }
        return energy;
    };
    const double before = hf_energy(tex);
    const double after = hf_energy(compress(tex, 3));
    ok = ok && after < before;

    // corruption grid: complete 4-row report on the proxy corpus
    bool grid_ok = false;
    std::string grid_note = "grid skipped (proxy training unavailable)";
    if (g_proxy.trained) {
        std::vector<std::pair<std::string, double>> rows;
        double clean_acc = 0.0;
        for (CorruptionKind kind : {CorruptionKind::None, CorruptionKind::Blur,
                                    CorruptionKind::Noise, CorruptionKind::Compress}) {
            CorruptionSpec spec;
            spec.kind = kind;
            MetricsReport r = evaluate(g_proxy.ckpt, g_proxy.test, spec, 20260810);
            rows.push_back({to_string(kind), r.accuracy});
            if (kind == CorruptionKind::None) clean_acc = r.accuracy;
        }
        grid_ok = rows.size() == 4;
        grid_note = "grid acc:";
        bool informative_ok = true;
        for (const auto& [name, acc] : rows) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), " %s %.3f", name.c_str(), acc);
            grid_note += buf;
            informative_ok = informative_ok && clean_acc >= acc - 0.02;
        }
        // informative, logged, non-fatal
        grid_note += informative_ok ? " (clean >= corrupted - 2%)"
                                    : " (note: a corrupted cell beats clean by > 2%)";
    }
    ok = ok && grid_ok;

    char detail[320];
    std::snprintf(detail, sizeof(detail),
                  "kernel sum |d|=%.1e; impulse [%.5f, %.5f]; noise mean %.4f std %.4f; "
                  "hf energy %.3g -> %.3g; %s",
                  std::abs(ksum - 1.0), lo, hi, mean, stddev, before, after, grid_note.c_str());
    record("corruption-signatures", ok, detail);
}

// ---------------------------------------------------------------------------
// Determinism: train -> checkpoint -> evaluate twice with one worker thread
// reproduces metrics bitwise; checkpoint write/read/evaluate is bitwise
// stable.
void check_determinism() {
    ThreadPool::instance().set_threads(1);
    const fs::path dir = work_dir() / "determinism";
    SynthResult corpus = synth_texture_dataset(16, 16, 2.0, 77, dir.string());
    TexViTConfig cfg = TexViTConfig::preset_of("micro");
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 99;
    CorruptionSpec noise;
    noise.kind = CorruptionKind::Noise;

    auto run_once = [&](const std::string& tag) {
        Checkpoint ckpt = train(cfg, tc, corpus.train, corpus.val);
        const std::string path = (dir / (tag + ".ckpt")).string();
        save_checkpoint(ckpt, path);
        Checkpoint back = load_checkpoint(path);
        MetricsReport r = evaluate(back, corpus.test, noise, 5);
        return std::make_pair(r.to_json(), r.roc_csv());
    };
    auto [json_a, roc_a] = run_once("a");
    auto [json_b, roc_b] = run_once("b");
    const bool rerun_ok = json_a == json_b && roc_a == roc_b;

    Checkpoint direct = train(cfg, tc, corpus.train, corpus.val);
    MetricsReport before = evaluate(direct, corpus.test, noise, 5);
    const std::string path = (dir / "roundtrip.ckpt").string();
    save_checkpoint(direct, path);
    MetricsReport after = evaluate(load_checkpoint(path), corpus.test, noise, 5);
    const bool roundtrip_ok =
        before.to_json() == after.to_json() && before.roc_csv() == after.roc_csv();

    ThreadPool::instance().set_threads(
        static_cast<int>(std::thread::hardware_concurrency()));
    record("determinism", rerun_ok && roundtrip_ok,
           std::string("two train->checkpoint->evaluate runs ") +
               (rerun_ok ? "bitwise equal" : "DIFFER") + "; checkpoint round trip " +
               (roundtrip_ok ? "bitwise stable" : "UNSTABLE"));
}

// ---------------------------------------------------------------------------
// Protocol structure: the ablation runner reproduces the 4-case shape, each
// case training on three categories and testing on the held-out fourth.
void check_protocol_structure() {
    const fs::path dir = work_dir() / "ablation";
    ProtocolSpec spec;
    spec.kind = ProtocolKind::Ablation;
    spec.model = TexViTConfig::preset_of("micro");
    spec.train.epochs = 1;
    spec.train.batch_size = 4;
    spec.train.seed = 7;
    spec.train.use_mixup = spec.train.use_cutmix = false;
    spec.train.use_randaug = spec.train.use_random_erase = false;
    spec.out_dir = (dir / "out").string();
    const char* names[4] = {"DF", "F2F", "FS", "NT"};
    int64_t category_sizes[4] = {0, 0, 0, 0};
    for (int i = 0; i < 4; ++i) {
        const fs::path cdir = dir / names[i];
        SynthResult r = synth_texture_dataset(12, 16, 2.0, 300 + static_cast<uint64_t>(i),
                                              cdir.string());
        DatasetManifest all;
        all.root = cdir.string();
        for (const auto* part : {&r.train, &r.val, &r.test})
            for (const auto& e : part->entries) all.entries.push_back(e);
        category_sizes[i] = all.size();
        const std::string mpath = (cdir / "all.csv").string();
        save_manifest(all, mpath);
        spec.categories.push_back({names[i], mpath});
    }
    ProtocolReport report = run_protocol(spec);
    bool ok = report.cells.size() == 4;
    const char* expect[4] = {"Case A (train F2F+FS+NT, test DF)", "Case B (train DF+FS+NT, test F2F)",
                             "Case C (train DF+F2F+NT, test FS)", "Case D (train DF+F2F+FS, test NT)"};
    for (size_t i = 0; ok && i < report.cells.size(); ++i) {
        ok = ok && report.cells[i].name == expect[i];
        ok = ok && fs::exists(report.cells[i].checkpoint_path);
        ok = ok && report.cells[i].report.total() == category_sizes[i];
    }
    record("protocol-structure", ok,
           ok ? "4 runs, Cases A-D, each trains on 3 categories and tests on the held-out one"
              : "case layout mismatch");
}

} // namespace

int main() {
    std::printf("Tex-ViT acceptance suite\n========================\n");
    check_gradient_fidelity();
    check_gram_properties();
    check_attention_normalization();
    check_oracle_equivalence();
    check_metrics();
    check_parameter_budget();
    check_proxy_experiment();
    check_corruption_signatures();
    check_determinism();
    check_protocol_structure();

    int failures = 0;
    for (const auto& r : g_results) failures += r.pass ? 0 : 1;
    std::printf("========================\n%zu criteria, %d failed\n", g_results.size(), failures);
    return failures == 0 ? 0 : 1;
}
