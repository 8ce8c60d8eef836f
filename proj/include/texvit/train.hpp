#pragma once

// Algorithm-level training and evaluation: the seeded epoch loop with
// augmentation, Adam updates and best-on-validation checkpointing, plus
// corruption-aware test evaluation.

#include <functional>
#include <set>

#include "texvit/checkpoint.hpp"
#include "texvit/data.hpp"
#include "texvit/metrics.hpp"
#include "texvit/train_config.hpp"

namespace texvit {

// Images decoded once and kept in memory; order mirrors the manifest.
struct LoadedDataset {
    std::vector<Tensor<float>> images;
    std::vector<int> labels;

    static LoadedDataset from_manifest(const DatasetManifest& m) {
        LoadedDataset d;
        d.images.reserve(m.entries.size());
        for (size_t i = 0; i < m.entries.size(); ++i) {
            d.images.push_back(decode_image(m.resolve(i)));
            d.labels.push_back(m.entries[i].label);
        }
        return d;
    }

    int64_t size() const { return static_cast<int64_t>(images.size()); }
};

struct TrainHooks {
    // Test seam: replaces the measured validation accuracy for best-epoch
    // selection when set.
    std::function<double(int epoch, double val_accuracy)> val_metric_override;
    std::function<void(int epoch, double mean_loss, double val_accuracy, double best)> on_epoch;
};

namespace train_detail {

// Scores (softmax class-1 probability) in dataset order, eval mode, no-grad.
inline std::vector<double> predict_scores(const TexViTConfig& cfg, ParamStore<float>& store,
                                          const std::vector<Tensor<float>>& images,
                                          int batch_size) {
    std::vector<double> scores;
    scores.reserve(images.size());
    const int64_t n = static_cast<int64_t>(images.size());
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t b = std::min<int64_t>(batch_size, n - start);
        const auto& first = images[static_cast<size_t>(start)];
        if (first.dim(1) != cfg.image_size || first.dim(2) != cfg.image_size)
            throw ShapeError("evaluate: image size " + shape_str(first.shape()) +
                             " does not match the checkpoint config (" +
                             std::to_string(cfg.image_size) + ")");
        Tensor<float> batch({b, 3, cfg.image_size, cfg.image_size});
        for (int64_t i = 0; i < b; ++i) {
            const auto& img = images[static_cast<size_t>(start + i)];
            require_same_shape(img, first, "evaluate batch");
            std::memcpy(batch.data() + i * img.numel(), img.data(),
                        sizeof(float) * static_cast<size_t>(img.numel()));
        }
        Tape<float> tape(false);
        Ctx<float> ctx{tape, store};
        ctx.training = false;
        Var<float> logits = texvit_forward(ctx, cfg, ctx.input(std::move(batch)));
        const Tensor<float>& lv = logits.val();
        for (int64_t i = 0; i < b; ++i) {
            const double l0 = lv.at({i, 0}), l1 = lv.at({i, 1});
            const double m = std::max(l0, l1);
            const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
            scores.push_back(e1 / (e0 + e1));
        }
    }
    return scores;
}

inline double accuracy_at_half(const std::vector<double>& scores, const std::vector<int>& labels) {
    int64_t correct = 0;
    for (size_t i = 0; i < scores.size(); ++i)
        correct += ((scores[i] >= 0.5 ? 1 : 0) == labels[i]) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(scores.size());
}

inline void check_disjoint(const DatasetManifest& a, const DatasetManifest& b, const char* what) {
    std::set<std::string> pa;
    for (size_t i = 0; i < a.entries.size(); ++i)
        pa.insert(std::filesystem::weakly_canonical(a.resolve(i)).string());
    for (size_t i = 0; i < b.entries.size(); ++i)
        if (pa.count(std::filesystem::weakly_canonical(b.resolve(i)).string()))
            throw ContractError(std::string(what) + ": manifests overlap at " + b.entries[i].path);
}

} // namespace train_detail

// Algorithm loop: per epoch, seeded shuffle, augment, forward, cross-entropy,
// backward, Adam; evaluate validation accuracy and keep the best-epoch
// weights (ties resolved to the earliest epoch).
inline Checkpoint train(const TexViTConfig& model_cfg, const TrainConfig& train_cfg,
                        const DatasetManifest& train_manifest, const DatasetManifest& val_manifest,
                        const TrainHooks& hooks = {}) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_manifest.entries.empty() || val_manifest.entries.empty())
        throw ContractError("train: manifests must be non-empty");
    train_detail::check_disjoint(train_manifest, val_manifest, "train/val");

    LoadedDataset train_data = LoadedDataset::from_manifest(train_manifest);
    LoadedDataset val_data = LoadedDataset::from_manifest(val_manifest);

    ParamStore<float> store;
    build_texvit_params(model_cfg, store, train_cfg.seed);
    AdamState<float> adam;

    Checkpoint best;
    best.config = model_cfg;
    best.seed = train_cfg.seed;
    best.best_val_accuracy = -1.0;
    best.best_epoch = 0;

    const int64_t n = train_data.size();
    const int64_t bs = std::min<int64_t>(train_cfg.batch_size, n);
    int64_t step = 0;
    for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), int64_t{0});
        RngState shuffle_rng = derive_rng(train_cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

        double loss_sum = 0.0;
        int64_t seen = 0;
        for (int64_t start = 0; start < n; start += bs, ++step) {
            const int64_t b = std::min<int64_t>(bs, n - start);
            std::vector<Sample> samples(static_cast<size_t>(b));
            for (int64_t i = 0; i < b; ++i) {
                const int64_t idx = order[static_cast<size_t>(start + i)];
                RngState srng = derive_rng(train_cfg.seed, "augment",
                                           (static_cast<uint64_t>(epoch) << 32) |
                                               static_cast<uint64_t>(start + i));
                Sample s{train_data.images[static_cast<size_t>(idx)],
                         Sample::one_hot(train_data.labels[static_cast<size_t>(idx)])};
                if (train_cfg.use_randaug)
                    s.image = rand_augment(s.image, train_cfg.randaug_ops,
                                           train_cfg.randaug_magnitude, srng);
                if (train_cfg.use_random_erase)
                    s.image = random_erase(s.image, train_cfg.erase_p, train_cfg.erase_area_lo,
                                           train_cfg.erase_area_hi, srng);
                samples[static_cast<size_t>(i)] = std::move(s);
            }
            if (train_cfg.use_mixup || train_cfg.use_cutmix) {
                RngState mrng = derive_rng(train_cfg.seed, "mix",
                                           (static_cast<uint64_t>(epoch) << 32) |
                                               static_cast<uint64_t>(start));
                const bool both = train_cfg.use_mixup && train_cfg.use_cutmix;
                const bool pick_mixup =
                    both ? (mrng.uniform() < 0.5) : train_cfg.use_mixup;
                std::vector<Sample> mixed(static_cast<size_t>(b));
                for (int64_t i = 0; i < b; ++i) {
                    const Sample& s1 = samples[static_cast<size_t>(i)];
                    const Sample& s2 = samples[static_cast<size_t>((i + 1) % b)];
                    mixed[static_cast<size_t>(i)] =
                        pick_mixup ? mixup(s1, s2, train_cfg.mixup_alpha, mrng)
                                   : cutmix(s1, s2, train_cfg.cutmix_alpha, mrng);
                }
                samples = std::move(mixed);
            }

            Tensor<float> batch({b, 3, model_cfg.image_size, model_cfg.image_size});
            Tensor<float> targets({b, 2});
            for (int64_t i = 0; i < b; ++i) {
                const Sample& s = samples[static_cast<size_t>(i)];
                if (s.image.shape() != Shape{3, model_cfg.image_size, model_cfg.image_size})
                    throw ShapeError("train: image " + shape_str(s.image.shape()) +
                                     " does not match configured size " +
                                     std::to_string(model_cfg.image_size));
                std::memcpy(batch.data() + i * s.image.numel(), s.image.data(),
                            sizeof(float) * static_cast<size_t>(s.image.numel()));
                targets.at({i, 0}) = s.label[0];
                targets.at({i, 1}) = s.label[1];
            }

            RngState droppath_rng =
                derive_rng(train_cfg.seed, "droppath", static_cast<uint64_t>(step));
            Tape<float> tape;
            Ctx<float> ctx{tape, store};
            ctx.training = true;
            ctx.rng = &droppath_rng;
            Var<float> logits = texvit_forward(ctx, model_cfg, ctx.input(std::move(batch)));
            Var<float> loss = cross_entropy_mean(ctx, logits, targets);
            const double loss_value = static_cast<double>(loss.val()[0]);
            if (!std::isfinite(loss_value))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(start / bs) + ", loss " +
                                   std::to_string(loss_value));
            store.zero_grads();
            tape.backward(loss.id);
            ctx.collect_grads();
            adam_step(store, adam, train_cfg.learning_rate, train_cfg.adam);
            loss_sum += loss_value * static_cast<double>(b);
            seen += b;
        }

        const std::vector<double> val_scores =
            train_detail::predict_scores(model_cfg, store, val_data.images, train_cfg.batch_size);
        const double val_acc = train_detail::accuracy_at_half(val_scores, val_data.labels);
        const double metric =
            hooks.val_metric_override ? hooks.val_metric_override(epoch, val_acc) : val_acc;
        if (metric > best.best_val_accuracy) {
            best.best_val_accuracy = metric;
            best.best_epoch = epoch;
            best.store = store; // deep copy of parameters and running stats
        }
        if (hooks.on_epoch)
            hooks.on_epoch(epoch, loss_sum / static_cast<double>(seen), metric,
                           best.best_val_accuracy);
    }

    best.has_adam = true;
    best.adam = std::move(adam);
    return best;
}

// Applies the corruption to test images only, runs eval-mode inference and
// scores softmax class-1 probability; metrics exactly equal compute_metrics
// on the collected (scores, labels).
inline MetricsReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                              const CorruptionSpec& corruption, uint64_t corrupt_seed = 0,
                              int batch_size = 64) {
    if (manifest.entries.empty()) throw ContractError("evaluate: empty manifest");
    corruption.validate();
    LoadedDataset data = LoadedDataset::from_manifest(manifest);
    for (size_t i = 0; i < data.images.size(); ++i) {
        if (corruption.kind == CorruptionKind::None) break;
        RngState rng = derive_rng(corrupt_seed, "corrupt", static_cast<uint64_t>(i));
        data.images[i] = apply_corruption(data.images[i], corruption, rng);
    }
    ParamStore<float> store = ckpt.store; // evaluation never mutates the checkpoint
    const std::vector<double> scores =
        train_detail::predict_scores(ckpt.config, store, data.images, batch_size);
    MetricsReport report = compute_metrics(scores, data.labels);
    report.corruption = to_string(corruption.kind);
    return report;
}

// Scores for one loaded dataset under a frozen checkpoint; the decomposition
// target evaluate() is checked against.
inline std::vector<double> predict_scores(const Checkpoint& ckpt,
                                          const std::vector<Tensor<float>>& images,
                                          int batch_size = 64) {
    ParamStore<float> store = ckpt.store;
    return train_detail::predict_scores(ckpt.config, store, images, batch_size);
}

} // namespace texvit
