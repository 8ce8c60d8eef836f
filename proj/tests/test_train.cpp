#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "texvit/protocol.hpp"
#include "texvit/threads.hpp"
#include "texvit/train.hpp"

using namespace texvit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("texvit_train_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TexViTConfig micro16() {
    TexViTConfig cfg = TexViTConfig::preset_of("micro");
    cfg.image_size = 16;
    return cfg;
}

TrainConfig tiny_train(int epochs, int batch) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch;
    t.seed = 11;
    t.use_mixup = false;
    t.use_cutmix = false;
    t.use_randaug = false;
    t.use_random_erase = false;
    return t;
}

} // namespace

TEST_CASE("cross entropy examples") {
    ParamStore<float> store;
    Tape<float> tape;
    Ctx<float> ctx{tape, store};
    SECTION("confident correct logits give near-zero loss") {
        Var<float> logits = ctx.input(Tensor<float>({1, 2}, {20.0f, -20.0f}));
        Tensor<float> target({1, 2}, {1.0f, 0.0f});
        auto loss = cross_entropy_mean(ctx, logits, target);
        REQUIRE_THAT(loss.val()[0], Catch::Matchers::WithinAbs(0.0, 1e-6));
    }
    SECTION("equal logits give ln 2 for any target") {
        Var<float> logits = ctx.input(Tensor<float>({1, 2}, {0.3f, 0.3f}));
        Tensor<float> target({1, 2}, {0.7f, 0.3f});
        auto loss = cross_entropy_mean(ctx, logits, target);
        REQUIRE_THAT(loss.val()[0], Catch::Matchers::WithinAbs(std::log(2.0), 1e-6));
    }
    SECTION("loss is linear in the target") {
        Tape<double> dt;
        ParamStore<double> ds;
        Ctx<double> dctx{dt, ds};
        Tensor<double> lv({1, 2}, {0.9, -0.4});
        Tensor<double> y1({1, 2}, {1.0, 0.0});
        Tensor<double> y2({1, 2}, {0.0, 1.0});
        const double lambda = 0.3;
        Tensor<double> mixed({1, 2}, {lambda, 1.0 - lambda});
        auto l1 = cross_entropy_mean(dctx, dctx.input(lv), y1);
        auto l2 = cross_entropy_mean(dctx, dctx.input(lv), y2);
        auto lm = cross_entropy_mean(dctx, dctx.input(lv), mixed);
        REQUIRE_THAT(lm.val()[0],
                     Catch::Matchers::WithinAbs(lambda * l1.val()[0] + (1 - lambda) * l2.val()[0],
                                                1e-12));
    }
    SECTION("target must sum to one") {
        Var<float> logits = ctx.input(Tensor<float>({1, 2}, {0.0f, 0.0f}));
        Tensor<float> target({1, 2}, {0.6f, 0.6f});
        REQUIRE_THROWS_AS(cross_entropy_mean(ctx, logits, target), ContractError);
    }
}

TEST_CASE("adam optimizer") {
    SECTION("zero gradient leaves parameters unchanged but advances the step") {
        ParamStore<double> store;
        store.create("w", {3}) = Tensor<double>({3}, {1.0, -2.0, 0.5});
        store.grad("w"); // zeros
        AdamState<double> state;
        adam_step(store, state, 0.01, AdamConfig{});
        REQUIRE(state.t == 1);
        REQUIRE(store.value("w")[0] == 1.0);
        REQUIRE(store.value("w")[1] == -2.0);
    }
    SECTION("first-step magnitude is approximately the learning rate") {
        ParamStore<double> store;
        store.create("w", {2}) = Tensor<double>({2}, {1.0, 1.0});
        store.grad("w") = Tensor<double>({2}, {0.37, -4.2});
        AdamState<double> state;
        adam_step(store, state, 0.01, AdamConfig{});
        REQUIRE_THAT(std::abs(store.value("w")[0] - 1.0), Catch::Matchers::WithinRel(0.01, 1e-6));
        REQUIRE_THAT(std::abs(store.value("w")[1] - 1.0), Catch::Matchers::WithinRel(0.01, 1e-6));
        REQUIRE(store.value("w")[0] < 1.0); // moves against the gradient
        REQUIRE(store.value("w")[1] > 1.0);
    }
    SECTION("lr zero is the identity on parameters") {
        ParamStore<double> store;
        store.create("w", {2}) = Tensor<double>({2}, {0.3, -0.7});
        store.grad("w") = Tensor<double>({2}, {1.0, 2.0});
        AdamState<double> state;
        adam_step(store, state, 0.0, AdamConfig{});
        REQUIRE(store.value("w")[0] == 0.3);
        REQUIRE(store.value("w")[1] == -0.7);
    }
    SECTION("100 steps on theta^2 match an independent reference trace") {
        // reference trace, coded separately from adam_step
        double theta_ref = 1.0, m = 0.0, v = 0.0;
        const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        for (int t = 1; t <= 100; ++t) {
            const double g = 2.0 * theta_ref;
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            theta_ref -= lr * (m / (1 - std::pow(b1, t))) /
                         (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        }
        ParamStore<double> store;
        store.create("theta", {1}) = Tensor<double>({1}, {1.0});
        AdamState<double> state;
        AdamConfig cfg;
        for (int t = 1; t <= 100; ++t) {
            store.zero_grads();
            store.grad("theta")[0] = 2.0 * store.value("theta")[0];
            adam_step(store, state, 0.05, cfg);
        }
        REQUIRE(state.t == 100);
        REQUIRE_THAT(store.value("theta")[0], Catch::Matchers::WithinAbs(theta_ref, 1e-6));
    }
}

TEST_CASE("checkpoint round trip is bitwise stable") {
    TexViTConfig cfg = micro16();
    Checkpoint ckpt;
    ckpt.config = cfg;
    build_texvit_params(cfg, ckpt.store, 9);
    ckpt.store.buffer("backbone.stem.norm.count")[0] = 1.0f;
    ckpt.has_adam = true;
    ckpt.adam.ensure(ckpt.store);
    ckpt.adam.t = 17;
    ckpt.best_val_accuracy = 0.875;
    ckpt.best_epoch = 3;
    ckpt.seed = 9;

    fs::path dir = temp_dir("ckpt");
    const std::string path = (dir / "model.ckpt").string();
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);

    REQUIRE(back.config.preset == cfg.preset);
    REQUIRE(back.config.image_size == cfg.image_size);
    REQUIRE(back.best_epoch == 3);
    REQUIRE(back.best_val_accuracy == 0.875);
    REQUIRE(back.adam.t == 17);
    REQUIRE(back.store.names() == ckpt.store.names());
    for (const auto& name : ckpt.store.names()) {
        const auto& a = ckpt.store.value(name);
        const auto& b = back.store.value(name);
        REQUIRE(a.shape() == b.shape());
        for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
    }
    for (const auto& name : ckpt.store.buffer_names()) {
        const auto& a = ckpt.store.buffer(name);
        const auto& b = back.store.buffer(name);
        for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
    }

    SECTION("corrupted bytes are rejected by the CRC") {
        auto bytes = io_detail::read_file(path);
        bytes[bytes.size() / 2] ^= 0x40;
        io_detail::write_file(path, bytes);
        REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("CRC"));
    }
    SECTION("bad magic is rejected") {
        auto bytes = io_detail::read_file(path);
        bytes[0] = 'X';
        io_detail::write_file(path, bytes);
        REQUIRE_THROWS_AS(load_checkpoint(path), FormatError);
    }
}

TEST_CASE("training loop") {
    fs::path dir = temp_dir("loop");
    SynthResult corpus = synth_texture_dataset(16, 16, 2.0, 5, dir.string());
    TexViTConfig cfg = micro16();

    SECTION("one-epoch smoke run writes a loadable checkpoint") {
        Checkpoint ckpt = train(cfg, tiny_train(1, 4), corpus.train, corpus.val);
        REQUIRE(ckpt.best_epoch == 1);
        const std::string path = (dir / "smoke.ckpt").string();
        save_checkpoint(ckpt, path);
        Checkpoint back = load_checkpoint(path);
        CorruptionSpec none;
        MetricsReport r = evaluate(back, corpus.test, none);
        REQUIRE(r.total() == corpus.test.size());
    }
    SECTION("injected validation scores select epoch 2") {
        TrainHooks hooks;
        const std::vector<double> injected = {0.5, 0.9, 0.7};
        hooks.val_metric_override = [&](int epoch, double) {
            return injected[static_cast<size_t>(epoch - 1)];
        };
        Checkpoint ckpt = train(cfg, tiny_train(3, 4), corpus.train, corpus.val, hooks);
        REQUIRE(ckpt.best_epoch == 2);
        REQUIRE(ckpt.best_val_accuracy == 0.9);
    }
    SECTION("overlapping train/val manifests are rejected") {
        REQUIRE_THROWS_AS(train(cfg, tiny_train(1, 4), corpus.train, corpus.train), ContractError);
    }
    SECTION("augmentations enabled still complete") {
        TrainConfig t = tiny_train(1, 4);
        t.use_mixup = t.use_cutmix = t.use_randaug = t.use_random_erase = true;
        Checkpoint ckpt = train(cfg, t, corpus.train, corpus.val);
        REQUIRE(ckpt.best_epoch == 1);
    }
}

TEST_CASE("evaluation semantics") {
    fs::path dir = temp_dir("eval");
    SynthResult corpus = synth_texture_dataset(12, 16, 2.0, 6, dir.string());
    TexViTConfig cfg = micro16();
    Checkpoint ckpt = train(cfg, tiny_train(1, 4), corpus.train, corpus.val);

    SECTION("metrics equal compute_metrics on the collected scores exactly") {
        CorruptionSpec none;
        MetricsReport r = evaluate(ckpt, corpus.test, none);
        LoadedDataset test = LoadedDataset::from_manifest(corpus.test);
        std::vector<double> scores = predict_scores(ckpt, test.images);
        MetricsReport direct = compute_metrics(scores, test.labels);
        REQUIRE(r.to_json() == [&] {
            direct.corruption = "none";
            return direct.to_json();
        }());
    }
    SECTION("constant-score model has majority accuracy and flagged/half AUC") {
        Checkpoint flat = ckpt;
        flat.store.value("head_a.fc.w").fill(0.0f);
        flat.store.value("head_b.fc.w").fill(0.0f);
        flat.store.value("head_a.fc.b").fill(0.0f);
        flat.store.value("head_b.fc.b").fill(0.0f);
        CorruptionSpec none;
        MetricsReport r = evaluate(flat, corpus.test, none);
        const double majority =
            std::max(static_cast<double>(corpus.test.count_label(0)),
                     static_cast<double>(corpus.test.count_label(1))) /
            static_cast<double>(corpus.test.size());
        REQUIRE(r.accuracy == majority);
        REQUIRE(r.auc_defined);
        REQUIRE(r.auc == 0.5);
    }
    SECTION("evaluate is bitwise reproducible, including after a checkpoint round trip") {
        CorruptionSpec noise;
        noise.kind = CorruptionKind::Noise;
        MetricsReport a = evaluate(ckpt, corpus.test, noise, 77);
        MetricsReport b = evaluate(ckpt, corpus.test, noise, 77);
        REQUIRE(a.to_json() == b.to_json());
        REQUIRE(a.roc_csv() == b.roc_csv());
        const std::string path = (dir / "rt.ckpt").string();
        save_checkpoint(ckpt, path);
        Checkpoint back = load_checkpoint(path);
        MetricsReport c = evaluate(back, corpus.test, noise, 77);
        REQUIRE(a.to_json() == c.to_json());
        REQUIRE(a.roc_csv() == c.roc_csv());
    }
    SECTION("size mismatch is a config error") {
        fs::path dir32 = temp_dir("eval32");
        SynthResult other = synth_texture_dataset(4, 32, 2.0, 6, dir32.string());
        CorruptionSpec none;
        REQUIRE_THROWS_AS(evaluate(ckpt, other.test, none), ShapeError);
    }
}

TEST_CASE("training is deterministic across runs and thread counts") {
    fs::path dir = temp_dir("det");
    SynthResult corpus = synth_texture_dataset(12, 16, 2.0, 8, dir.string());
    TexViTConfig cfg = micro16();
    TrainConfig t = tiny_train(2, 4);
    t.use_randaug = true; // exercise the seeded augmentation path
    ThreadPool::instance().set_threads(1);
    Checkpoint a = train(cfg, t, corpus.train, corpus.val);
    ThreadPool::instance().set_threads(2);
    Checkpoint b = train(cfg, t, corpus.train, corpus.val);
    ThreadPool::instance().set_threads(1);
    for (const auto& name : a.store.names()) {
        const auto& ta = a.store.value(name);
        const auto& tb = b.store.value(name);
        for (int64_t i = 0; i < ta.numel(); ++i) {
            INFO(name << " index " << i);
            REQUIRE(ta[i] == tb[i]);
        }
    }
    CorruptionSpec none;
    REQUIRE(evaluate(a, corpus.test, none).to_json() == evaluate(b, corpus.test, none).to_json());
}

TEST_CASE("protocol runners") {
    TexViTConfig cfg = micro16();
    TrainConfig t = tiny_train(1, 4);

    SECTION("ablation over four categories produces Cases A-D") {
        fs::path dir = temp_dir("ablation");
        ProtocolSpec spec;
        spec.kind = ProtocolKind::Ablation;
        spec.model = cfg;
        spec.train = t;
        spec.out_dir = (dir / "out").string();
        const char* names[4] = {"DF", "F2F", "FS", "NT"};
        for (int i = 0; i < 4; ++i) {
            fs::path cdir = dir / names[i];
            SynthResult r = synth_texture_dataset(12, 16, 2.0, 100 + static_cast<uint64_t>(i),
                                                  cdir.string());
            DatasetManifest all;
            all.root = cdir.string();
            for (const auto* part : {&r.train, &r.val, &r.test})
                for (const auto& e : part->entries) all.entries.push_back(e);
            const std::string mpath = (cdir / "all.csv").string();
            save_manifest(all, mpath);
            spec.categories.push_back({names[i], mpath});
        }
        ProtocolReport report = run_protocol(spec);
        REQUIRE(report.cells.size() == 4);
        REQUIRE_THAT(report.cells[0].name, Catch::Matchers::StartsWith("Case A"));
        REQUIRE_THAT(report.cells[0].name,
                     Catch::Matchers::ContainsSubstring("train F2F+FS+NT, test DF"));
        REQUIRE_THAT(report.cells[3].name,
                     Catch::Matchers::ContainsSubstring("train DF+F2F+FS, test NT"));
        for (const auto& cell : report.cells) REQUIRE(fs::exists(cell.checkpoint_path));
        REQUIRE(fs::exists(fs::path(spec.out_dir) / "grid.json"));
        REQUIRE(fs::exists(fs::path(spec.out_dir) / "grid.csv"));
        // each grid cell equals an independent evaluate() with the same seed
        Checkpoint case_a = load_checkpoint(report.cells[0].checkpoint_path);
        DatasetManifest df = load_manifest(spec.categories[0].second);
        CorruptionSpec none;
        MetricsReport direct = evaluate(case_a, df, none, t.seed);
        direct.corruption = "none";
        REQUIRE(direct.to_json() == report.cells[0].report.to_json());
    }

    SECTION("corruption grid emits the four rows in order") {
        fs::path dir = temp_dir("grid");
        SynthResult corpus = synth_texture_dataset(12, 16, 2.0, 9, dir.string());
        ProtocolSpec spec;
        spec.kind = ProtocolKind::CorruptionGrid;
        spec.model = cfg;
        spec.train = t;
        spec.out_dir = (dir / "out").string();
        spec.train_manifest = corpus.train_csv;
        spec.val_manifest = corpus.val_csv;
        spec.test_manifest = corpus.test_csv;
        ProtocolReport report = run_protocol(spec);
        REQUIRE(report.cells.size() == 4);
        REQUIRE(report.cells[0].name == "none");
        REQUIRE(report.cells[1].name == "blur");
        REQUIRE(report.cells[2].name == "noise");
        REQUIRE(report.cells[3].name == "compress");
        for (const auto& cell : report.cells)
            REQUIRE(cell.report.total() == corpus.test.size());
    }

    SECTION("cross-domain produces one cell per named test set") {
        fs::path dir = temp_dir("cross");
        SynthResult src = synth_texture_dataset(12, 16, 2.0, 31, (dir / "src").string());
        SynthResult dst1 = synth_texture_dataset(8, 16, 1.5, 32, (dir / "dst1").string());
        SynthResult dst2 = synth_texture_dataset(8, 16, 3.0, 33, (dir / "dst2").string());
        ProtocolSpec spec;
        spec.kind = ProtocolKind::CrossDomain;
        spec.model = cfg;
        spec.train = t;
        spec.out_dir = (dir / "out").string();
        spec.train_manifest = src.train_csv;
        spec.val_manifest = src.val_csv;
        spec.test_sets = {{"sigma1.5", dst1.test_csv}, {"sigma3", dst2.test_csv}};
        ProtocolReport report = run_protocol(spec);
        REQUIRE(report.cells.size() == 2);
        REQUIRE(report.cells[0].name == "sigma1.5");
        REQUIRE(report.cells[1].name == "sigma3");
        REQUIRE(report.cells[0].checkpoint_path == report.cells[1].checkpoint_path);
        REQUIRE(fs::exists(fs::path(spec.out_dir) / "grid.json"));
    }

    SECTION("overlapping train and test manifests are a protocol violation") {
        fs::path dir = temp_dir("overlap");
        SynthResult corpus = synth_texture_dataset(8, 16, 2.0, 10, dir.string());
        ProtocolSpec spec;
        spec.kind = ProtocolKind::CorruptionGrid;
        spec.model = cfg;
        spec.train = t;
        spec.out_dir = (dir / "out").string();
        spec.train_manifest = corpus.train_csv;
        spec.val_manifest = corpus.val_csv;
        spec.test_manifest = corpus.train_csv; // contamination
        REQUIRE_THROWS_AS(run_protocol(spec), ProtocolError);
    }
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    fs::path dir = temp_dir("diverge");
    SynthResult corpus = synth_texture_dataset(8, 16, 2.0, 12, dir.string());
    TexViTConfig cfg = micro16();
    TrainConfig t = tiny_train(2, 4);
    t.learning_rate = 1e20; // guaranteed overflow
    try {
        train(cfg, t, corpus.train, corpus.val);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("epoch"));
        REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("batch"));
    }
}
