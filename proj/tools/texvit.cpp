// texvit — operator CLI: dataset synthesis, training, evaluation, corruption
// grids, gradient checking, parameter counting, protocol runs and Grad-CAM
// export. Exit codes: 0 success, 2 usage/config error, 3 protocol violation,
// 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "texvit/texvit.hpp"

namespace {

using namespace texvit;

constexpr int kExitUsage = 2;
constexpr int kExitProtocol = 3;
constexpr int kExitNumeric = 4;

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write: " + path);
    out << text;
}

int cmd_synth(int n, int size, double smooth_sigma, uint64_t seed, const std::string& out_dir) {
    SynthResult r = synth_texture_dataset(n, size, smooth_sigma, seed, out_dir);
    std::printf("wrote %d images under %s\n", n, out_dir.c_str());
    std::printf("manifests: %s (%lld) %s (%lld) %s (%lld)\n", r.train_csv.c_str(),
                static_cast<long long>(r.train.size()), r.val_csv.c_str(),
                static_cast<long long>(r.val.size()), r.test_csv.c_str(),
                static_cast<long long>(r.test.size()));
    std::printf("laplacian energy: class0 %.6f class1 %.6f (%s)\n", r.mean_laplacian_real,
                r.mean_laplacian_fake,
                r.mean_laplacian_fake < r.mean_laplacian_real ? "class1 smoother"
                                                              : "no separation");
    if (r.degenerate)
        std::printf("warning: smooth_sigma = 0, the two classes are identically distributed\n");
    return 0;
}

int cmd_train(const std::string& config_path, int epochs_override, double lr_override,
              int batch_override, int64_t seed_override, const std::string& out_override,
              const std::string& train_manifest_override,
              const std::string& val_manifest_override) {
    CliConfig cfg = cli_config_from_file(config_path);
    if (epochs_override > 0) cfg.train.epochs = epochs_override;
    if (lr_override > 0.0) cfg.train.learning_rate = lr_override;
    if (batch_override > 0) cfg.train.batch_size = batch_override;
    if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
    if (!out_override.empty()) cfg.checkpoint_path = out_override;
    if (!train_manifest_override.empty()) cfg.train_manifest = train_manifest_override;
    if (!val_manifest_override.empty()) cfg.val_manifest = val_manifest_override;
    cfg.train.validate();
    if (cfg.train_manifest.empty() || cfg.val_manifest.empty())
        throw ContractError("train: data.train_manifest and data.val_manifest are required");

    DatasetManifest train_m = load_manifest(cfg.train_manifest, "train");
    DatasetManifest val_m = load_manifest(cfg.val_manifest, "val");
    TrainHooks hooks;
    hooks.on_epoch = [](int epoch, double loss, double val_acc, double best) {
        std::printf("epoch %3d  loss %.6f  val_acc %.4f  best %.4f\n", epoch, loss, val_acc,
                    best);
        std::fflush(stdout);
    };
    Checkpoint ckpt = train(cfg.model, cfg.train, train_m, val_m, hooks);
    save_checkpoint(ckpt, cfg.checkpoint_path);
    std::printf("best epoch %d  val_acc %.6f\ncheckpoint: %s\n", ckpt.best_epoch,
                ckpt.best_val_accuracy, cfg.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& corrupt_kind, uint64_t corrupt_seed,
             const std::string& out_json, const std::string& out_roc) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    DatasetManifest manifest = load_manifest(manifest_path, "test");
    CorruptionSpec spec;
    spec.kind = corruption_kind_from_string(corrupt_kind);
    MetricsReport report = evaluate(ckpt, manifest, spec, corrupt_seed);
    write_text_file(out_json, report.to_json() + "\n");
    if (!report.roc.empty()) write_text_file(out_roc, report.roc_csv());
    std::printf("%s\n", report.to_json().c_str());
    std::printf("metrics: %s  roc: %s\n", out_json.c_str(),
                report.roc.empty() ? "(auc undefined; no curve)" : out_roc.c_str());
    return 0;
}

int cmd_gradcheck(const std::string& preset, const std::string& only_op, int probes, double eps,
                  bool corrupt_backward) {
    double worst = 0.0;
    std::string worst_name;
    if (only_op.empty() || only_op == "texvit") {
        TexViTConfig cfg = TexViTConfig::preset_of(preset);
        ParamStore<double> store;
        build_texvit_params(cfg, store, 7);
        RngState data_rng(13);
        Tensor<double> img =
            rng_uniform<double>(data_rng, {2, 3, cfg.image_size, cfg.image_size});
        Tensor<double> target({2, 2}, {1.0, 0.0, 0.0, 1.0});
        auto eval_fn = [&](bool with_grad) {
            Tape<double> tape(with_grad);
            Ctx<double> ctx{tape, store};
            ctx.training = true;
            Var<double> logits = texvit_forward(ctx, cfg, ctx.input(img));
            Var<double> loss = cross_entropy_mean(ctx, logits, target);
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss.id);
                ctx.collect_grads();
                if (corrupt_backward) { // checker self-test: flip every gradient's sign
                    for (const auto& name : store.names()) {
                        Tensor<double>& g = store.grad(name);
                        for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
                    }
                }
            }
            return loss.val()[0];
        };
        RngState probe_rng(29);
        GradCheckReport report = grad_check<double>(eval_fn, store, probes, eps, probe_rng);
        std::printf("end-to-end %-18s max_rel_err %.3e  (worst %s[%lld])\n", preset.c_str(),
                    report.max_rel_err, report.worst_param.c_str(),
                    static_cast<long long>(report.worst_index));
        if (report.max_rel_err > worst) {
            worst = report.max_rel_err;
            worst_name = "texvit:" + preset;
        }
    }
    if (only_op != "texvit") {
        auto results = gradsuite::run_all(only_op.empty() ? 20 : 20, 0x7ef1u, only_op);
        if (results.empty() && !only_op.empty())
            throw ContractError("gradcheck: unknown op `" + only_op + "`");
        for (const auto& r : results) {
            std::printf("op %-22s max_rel_err %.3e\n", r.name.c_str(), r.max_rel_err);
            if (r.max_rel_err > worst) {
                worst = r.max_rel_err;
                worst_name = r.name;
            }
        }
    }
    const bool pass = worst <= 1e-4;
    std::printf("gradcheck %s: worst %.3e (%s)\n", pass ? "PASS" : "FAIL", worst,
                worst_name.c_str());
    return pass ? 0 : kExitNumeric;
}

int cmd_params(const std::string& preset) {
    TexViTConfig cfg = TexViTConfig::preset_of(preset);
    const int64_t count = parameter_count(cfg);
    std::printf("%s parameters: %lld\n", preset.c_str(), static_cast<long long>(count));
    if (preset == "paper_scale") {
        const bool pass = count >= 38'700'000 && count <= 47'300'000;
        std::printf("budget 43M +-10%% [38700000, 47300000]: %s\n", pass ? "PASS" : "FAIL");
    }
    return 0;
}

int cmd_cam(const std::string& ckpt_path, const std::string& image_path, std::string layer,
            int target_class, const std::string& out_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (layer.empty())
        layer = "backbone.stage" + std::to_string(ckpt.config.backbone.stages());
    Tensor<float> img = decode_image(image_path);
    Heatmap heat = grad_cam(ckpt, img, layer, target_class);
    export_overlay(img, heat, out_path);
    std::printf("grad-cam layer %s class %d -> %s\n", heat.layer.c_str(), heat.target_class,
                out_path.c_str());
    return 0;
}

int cmd_protocol(const std::string& spec_path, const std::string& out_override) {
    ProtocolSpec spec = protocol_spec_from_file(spec_path);
    if (!out_override.empty()) spec.out_dir = out_override;
    ProtocolReport report = run_protocol(spec);
    for (const auto& cell : report.cells) {
        std::printf("%-40s acc %.4f  auc %s\n", cell.name.c_str(), cell.report.accuracy,
                    cell.report.auc_defined ? std::to_string(cell.report.auc).c_str() : "n/a");
    }
    std::printf("reports: %s\n", spec.out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tex-ViT texture-aware deepfake detector"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate the synthetic smooth-vs-textured corpus");
    int synth_n = 2000, synth_size = 32;
    double synth_sigma = 2.0;
    uint64_t synth_seed = 7;
    std::string synth_out = "synth_data";
    synth->add_option("--n", synth_n, "total image count (even)");
    synth->add_option("--size", synth_size, "image side in pixels");
    synth->add_option("--smooth-sigma", synth_sigma, "low-pass sigma for the smooth class");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output directory");

    auto* train_cmd = app.add_subcommand("train", "train from a config file");
    std::string train_config, train_out, train_tm, train_vm;
    int train_epochs = 0, train_batch = 0;
    double train_lr = 0.0;
    int64_t train_seed = -1;
    train_cmd->add_option("--config", train_config, "key = value config file")->required();
    train_cmd->add_option("--epochs", train_epochs, "override train.epochs");
    train_cmd->add_option("--lr", train_lr, "override train.learning_rate");
    train_cmd->add_option("--batch", train_batch, "override train.batch_size");
    train_cmd->add_option("--seed", train_seed, "override train.seed");
    train_cmd->add_option("--out", train_out, "override output.checkpoint");
    train_cmd->add_option("--train-manifest", train_tm, "override data.train_manifest");
    train_cmd->add_option("--val-manifest", train_vm, "override data.val_manifest");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    std::string eval_ckpt, eval_manifest, eval_corrupt = "none";
    std::string eval_json = "metrics.json", eval_roc = "roc.csv";
    uint64_t eval_seed = 0;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "test manifest CSV")->required();
    eval_cmd->add_option("--corrupt", eval_corrupt, "none|blur|noise|compress");
    eval_cmd->add_option("--corrupt-seed", eval_seed, "seed for the noise corruption");
    eval_cmd->add_option("--out-json", eval_json, "metrics JSON path");
    eval_cmd->add_option("--out-roc", eval_roc, "ROC CSV path");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string grad_preset = "micro", grad_op;
    int grad_probes = 30;
    double grad_eps = 1e-5;
    bool grad_corrupt = false;
    grad_cmd->add_option("--preset", grad_preset, "model preset for the end-to-end check");
    grad_cmd->add_option("--op", grad_op, "check a single primitive (or `texvit`)");
    grad_cmd->add_option("--probes", grad_probes, "probe count for the end-to-end check");
    grad_cmd->add_option("--eps", grad_eps, "finite-difference step");
    grad_cmd->add_flag("--corrupt-backward", grad_corrupt,
                       "debug: sign-flip one gradient (checker self-test)");

    auto* params_cmd = app.add_subcommand("params", "count trainable parameters");
    std::string params_preset = "paper_scale";
    params_cmd->add_option("--preset", params_preset, "paper_scale | micro");

    auto* cam_cmd = app.add_subcommand("cam", "export a Grad-CAM overlay");
    std::string cam_ckpt, cam_image, cam_layer, cam_out = "cam.png";
    int cam_class = -1;
    cam_cmd->add_option("--ckpt", cam_ckpt, "checkpoint file")->required();
    cam_cmd->add_option("--image", cam_image, "input image (PPM or PNG)")->required();
    cam_cmd->add_option("--layer", cam_layer, "backbone stage or texture tap name");
    cam_cmd->add_option("--class", cam_class, "target class (0/1; -1 = predicted)");
    cam_cmd->add_option("--out", cam_out, "output PNG");

    auto* proto_cmd = app.add_subcommand("protocol", "run a protocol spec");
    std::string proto_spec, proto_out;
    proto_cmd->add_option("--spec", proto_spec, "protocol spec file")->required();
    proto_cmd->add_option("--out", proto_out, "override protocol.out_dir");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_n, synth_size, synth_sigma, synth_seed, synth_out);
        if (train_cmd->parsed())
            return cmd_train(train_config, train_epochs, train_lr, train_batch, train_seed,
                             train_out, train_tm, train_vm);
        if (eval_cmd->parsed())
            return cmd_eval(eval_ckpt, eval_manifest, eval_corrupt, eval_seed, eval_json,
                            eval_roc);
        if (grad_cmd->parsed())
            return cmd_gradcheck(grad_preset, grad_op, grad_probes, grad_eps, grad_corrupt);
        if (params_cmd->parsed()) return cmd_params(params_preset);
        if (cam_cmd->parsed())
            return cmd_cam(cam_ckpt, cam_image, cam_layer, cam_class, cam_out);
        if (proto_cmd->parsed()) return cmd_protocol(proto_spec, proto_out);
    } catch (const ProtocolError& e) {
        std::fprintf(stderr, "protocol violation: %s\n", e.what());
        return kExitProtocol;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
