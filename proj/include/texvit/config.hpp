#pragma once

// Flat `key = value` configuration files with [sections]. Grammar:
//   - lines are `key = value`, `[section]`, blank, or comment (# or ; to EOL)
//   - keys are addressed as `section.key`; keys before any section header
//     live in the top-level namespace
//   - values keep interior whitespace; booleans accept on/off/true/false/1/0
//   - unknown keys are hard errors (every key must be consumed)
// File order is preserved, so sections like [categories] define ordered lists.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "texvit/corrupt.hpp"
#include "texvit/protocol.hpp"
#include "texvit/train_config.hpp"
#include "texvit/vit.hpp"

namespace texvit {

class KvConfig {
public:
    static KvConfig parse_string(const std::string& text, const std::string& origin) {
        KvConfig cfg;
        cfg.origin_ = origin;
        std::string line, section;
        size_t pos = 0;
        int line_no = 0;
        while (pos <= text.size()) {
            const size_t nl = text.find('\n', pos);
            line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
            pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const size_t comment = line.find_first_of("#;");
            if (comment != std::string::npos) line.resize(comment);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']')
                    throw ContractError(origin + ":" + std::to_string(line_no) +
                                        ": malformed section header");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                continue;
            }
            const size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ContractError(origin + ":" + std::to_string(line_no) +
                                    ": expected `key = value`");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ContractError(origin + ":" + std::to_string(line_no) + ": empty key");
            const std::string full = section.empty() ? key : section + "." + key;
            for (const auto& [k, v] : cfg.entries_)
                if (k == full)
                    throw ContractError(origin + ":" + std::to_string(line_no) +
                                        ": duplicate key `" + full + "`");
            cfg.entries_.push_back({full, value});
        }
        return cfg;
    }

    static KvConfig parse_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ContractError("config file not found: " + path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        KvConfig cfg = parse_string(text, path);
        cfg.base_dir_ = std::filesystem::path(path).parent_path().string();
        return cfg;
    }

    bool has(const std::string& key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return true;
        return false;
    }

    std::string str(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        return str(key);
    }

    std::string str(const std::string& key) {
        for (const auto& [k, v] : entries_)
            if (k == key) {
                consumed_.insert(key);
                return v;
            }
        throw ContractError(origin_ + ": missing required key `" + key + "`");
    }

    // Paths resolve relative to the config file's directory.
    std::string path(const std::string& key) { return resolve(str(key)); }
    std::string path(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        return resolve(str(key));
    }

    std::string resolve(const std::string& p) const {
        if (p.empty() || base_dir_.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (std::filesystem::path(base_dir_) / p).string();
    }

    int64_t integer(const std::string& key, int64_t fallback) {
        if (!has(key)) return fallback;
        const std::string v = str(key);
        try {
            size_t used = 0;
            const int64_t r = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ContractError(origin_ + ": key `" + key + "` is not an integer: `" + v + "`");
        }
    }

    double real(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const std::string v = str(key);
        try {
            size_t used = 0;
            const double r = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ContractError(origin_ + ": key `" + key + "` is not a number: `" + v + "`");
        }
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const std::string v = str(key);
        if (v == "on" || v == "true" || v == "1") return true;
        if (v == "off" || v == "false" || v == "0") return false;
        throw ContractError(origin_ + ": key `" + key + "` is not a boolean: `" + v + "`");
    }

    std::vector<int> int_list(const std::string& key, std::vector<int> fallback) {
        if (!has(key)) return fallback;
        const std::string v = str(key);
        std::vector<int> out;
        size_t pos = 0;
        while (pos <= v.size()) {
            size_t comma = v.find(',', pos);
            if (comma == std::string::npos) comma = v.size();
            const std::string item = trim(v.substr(pos, comma - pos));
            if (!item.empty()) {
                try {
                    out.push_back(std::stoi(item));
                } catch (const std::exception&) {
                    throw ContractError(origin_ + ": key `" + key + "` has a bad list item: `" +
                                        item + "`");
                }
            }
            pos = comma + 1;
        }
        return out;
    }

    // Ordered (key, value) pairs of one section; all marked consumed.
    std::vector<std::pair<std::string, std::string>> section(const std::string& name) {
        std::vector<std::pair<std::string, std::string>> out;
        const std::string prefix = name + ".";
        for (const auto& [k, v] : entries_)
            if (k.rfind(prefix, 0) == 0) {
                consumed_.insert(k);
                out.push_back({k.substr(prefix.size()), v});
            }
        return out;
    }

    // Every key must have been consumed; unknown keys are hard errors.
    void finish() const {
        std::string unknown;
        for (const auto& [k, v] : entries_)
            if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
        if (!unknown.empty())
            throw ContractError(origin_ + ": unknown config keys: " + unknown);
    }

private:
    static std::string trim(const std::string& s) {
        size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    std::vector<std::pair<std::string, std::string>> entries_;
    std::set<std::string> consumed_;
    std::string origin_ = "<string>";
    std::string base_dir_;
};

// Merged operator-facing configuration: model + training + corruption +
// paths, parsed from one file; command-line flags override afterwards.
struct CliConfig {
    TexViTConfig model;
    TrainConfig train;
    CorruptionSpec corrupt;
    std::string train_manifest;
    std::string val_manifest;
    std::string test_manifest;
    std::string checkpoint_path = "texvit.ckpt";
    std::string metrics_json = "metrics.json";
    std::string roc_csv = "roc.csv";
};

namespace config_detail {

inline TexViTConfig model_from(KvConfig& kv) {
    TexViTConfig cfg = TexViTConfig::preset_of(kv.str("model.preset", "paper_scale"));
    if (kv.has("model.image_size"))
        cfg.image_size = static_cast<int>(kv.integer("model.image_size", cfg.image_size));
    const std::string small = kv.str("model.small_input", "auto");
    if (small == "auto")
        cfg.backbone.small_input_mode = cfg.image_size < 64;
    else if (small == "on" || small == "true" || small == "1")
        cfg.backbone.small_input_mode = true;
    else if (small == "off" || small == "false" || small == "0")
        cfg.backbone.small_input_mode = false;
    else
        throw ContractError("model.small_input must be auto/on/off");
    cfg.backbone.norm_kind = norm_kind_from_string(kv.str("model.norm_kind", "batch"));
    cfg.backbone.stage_channels = kv.int_list("model.stage_channels", cfg.backbone.stage_channels);
    cfg.backbone.blocks_per_stage =
        kv.int_list("model.blocks_per_stage", cfg.backbone.blocks_per_stage);
    cfg.backbone.texture_taps = kv.int_list("model.texture_taps", cfg.backbone.texture_taps);
    cfg.backbone.gram_channels =
        static_cast<int>(kv.integer("model.gram_channels", cfg.backbone.gram_channels));
    cfg.backbone.texture_channels =
        static_cast<int>(kv.integer("model.texture_channels", cfg.backbone.texture_channels));
    cfg.cross_rounds = static_cast<int>(kv.integer("model.cross_rounds", cfg.cross_rounds));
    for (BranchConfig* bc : {&cfg.branch_a, &cfg.branch_b}) {
        bc->embed_dim = static_cast<int>(kv.integer("model.embed_dim", bc->embed_dim));
        bc->depth = static_cast<int>(kv.integer("model.depth", bc->depth));
        bc->heads = static_cast<int>(kv.integer("model.heads", bc->heads));
        bc->mlp_ratio = static_cast<int>(kv.integer("model.mlp_ratio", bc->mlp_ratio));
        bc->patch_size = static_cast<int>(kv.integer("model.patch_size", bc->patch_size));
        bc->drop_path_rate = kv.real("model.drop_path", bc->drop_path_rate);
    }
    return cfg;
}

inline TrainConfig train_from(KvConfig& kv) {
    TrainConfig t;
    t.learning_rate = kv.real("train.learning_rate", t.learning_rate);
    t.batch_size = static_cast<int>(kv.integer("train.batch_size", t.batch_size));
    t.epochs = static_cast<int>(kv.integer("train.epochs", t.epochs));
    t.adam.beta1 = kv.real("train.adam_beta1", t.adam.beta1);
    t.adam.beta2 = kv.real("train.adam_beta2", t.adam.beta2);
    t.adam.eps = kv.real("train.adam_eps", t.adam.eps);
    t.use_mixup = kv.boolean("train.mixup", t.use_mixup);
    t.mixup_alpha = kv.real("train.mixup_alpha", t.mixup_alpha);
    t.use_cutmix = kv.boolean("train.cutmix", t.use_cutmix);
    t.cutmix_alpha = kv.real("train.cutmix_alpha", t.cutmix_alpha);
    t.use_randaug = kv.boolean("train.randaug", t.use_randaug);
    t.randaug_ops = static_cast<int>(kv.integer("train.randaug_ops", t.randaug_ops));
    t.randaug_magnitude =
        static_cast<int>(kv.integer("train.randaug_magnitude", t.randaug_magnitude));
    t.use_random_erase = kv.boolean("train.random_erase", t.use_random_erase);
    t.erase_p = kv.real("train.erase_p", t.erase_p);
    t.erase_area_lo = kv.real("train.erase_area_lo", t.erase_area_lo);
    t.erase_area_hi = kv.real("train.erase_area_hi", t.erase_area_hi);
    t.seed = static_cast<uint64_t>(kv.integer("train.seed", static_cast<int64_t>(t.seed)));
    t.reproducible = kv.boolean("train.reproducible", t.reproducible);
    return t;
}

inline CorruptionSpec corrupt_from(KvConfig& kv) {
    CorruptionSpec c;
    c.kind = corruption_kind_from_string(kv.str("corrupt.kind", "none"));
    c.blur_kernel = static_cast<int>(kv.integer("corrupt.blur_kernel", c.blur_kernel));
    c.blur_sigma = kv.real("corrupt.blur_sigma", c.blur_sigma);
    c.noise_mean = kv.real("corrupt.noise_mean", c.noise_mean);
    c.noise_std = kv.real("corrupt.noise_std", c.noise_std);
    c.noise_clamp = kv.boolean("corrupt.noise_clamp", c.noise_clamp);
    c.compress_factor =
        static_cast<int>(kv.integer("corrupt.compress_factor", c.compress_factor));
    return c;
}

} // namespace config_detail

inline CliConfig cli_config_from_file(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    CliConfig cfg;
    cfg.model = config_detail::model_from(kv);
    cfg.train = config_detail::train_from(kv);
    cfg.corrupt = config_detail::corrupt_from(kv);
    cfg.train_manifest = kv.path("data.train_manifest", "");
    cfg.val_manifest = kv.path("data.val_manifest", "");
    cfg.test_manifest = kv.path("data.test_manifest", "");
    cfg.checkpoint_path = kv.path("output.checkpoint", cfg.checkpoint_path);
    cfg.metrics_json = kv.path("output.metrics_json", cfg.metrics_json);
    cfg.roc_csv = kv.path("output.roc_csv", cfg.roc_csv);
    kv.finish();
    cfg.model.validate();
    cfg.train.validate();
    cfg.corrupt.validate();
    return cfg;
}

// Protocol spec file: [protocol] kind/out_dir, the shared [model]/[train]/
// [corrupt] sections, plus [manifests], ordered [tests] or [categories].
inline ProtocolSpec protocol_spec_from_file(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    ProtocolSpec spec;
    spec.kind = protocol_kind_from_string(kv.str("protocol.kind"));
    spec.out_dir = kv.path("protocol.out_dir", "protocol_out");
    spec.model = config_detail::model_from(kv);
    spec.train = config_detail::train_from(kv);
    spec.corruption = config_detail::corrupt_from(kv);
    switch (spec.kind) {
        case ProtocolKind::CorruptionGrid:
            spec.train_manifest = kv.path("manifests.train");
            spec.val_manifest = kv.path("manifests.val");
            spec.test_manifest = kv.path("manifests.test");
            break;
        case ProtocolKind::CrossDomain:
            spec.train_manifest = kv.path("manifests.train");
            spec.val_manifest = kv.path("manifests.val");
            for (auto& [name, p] : kv.section("tests"))
                spec.test_sets.push_back({name, kv.resolve(p)});
            if (spec.test_sets.empty())
                throw ContractError(path + ": cross_domain needs a [tests] section");
            break;
        case ProtocolKind::Ablation:
            for (auto& [name, p] : kv.section("categories"))
                spec.categories.push_back({name, kv.resolve(p)});
            if (spec.categories.size() < 2)
                throw ContractError(path + ": ablation needs at least two [categories]");
            break;
    }
    kv.finish();
    spec.model.validate();
    spec.train.validate();
    spec.corruption.validate();
    return spec;
}

} // namespace texvit
