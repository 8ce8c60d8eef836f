#pragma once

// Evaluation protocols: cross-domain transfer, the corruption grid, and the
// leave-one-category-out ablation (Cases A-D). Each cell is one train and/or
// evaluate run; reports land in an output directory as JSON + ROC CSV plus a
// machine-readable grid summary.

#include <filesystem>
#include <fstream>

#include "texvit/train.hpp"

namespace texvit {

// Raised on train/test contamination and other protocol violations; the CLI
// maps it to exit code 3.
class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class ProtocolKind { CrossDomain, CorruptionGrid, Ablation };

inline ProtocolKind protocol_kind_from_string(const std::string& s) {
    if (s == "cross_domain") return ProtocolKind::CrossDomain;
    if (s == "corruption_grid") return ProtocolKind::CorruptionGrid;
    if (s == "ablation") return ProtocolKind::Ablation;
    throw ContractError("unknown protocol kind: " + s);
}

struct ProtocolSpec {
    ProtocolKind kind = ProtocolKind::CorruptionGrid;
    TexViTConfig model;
    TrainConfig train;
    CorruptionSpec corruption; // parameters for the grid's blur/noise/compress
    std::string out_dir;

    // cross_domain and corruption_grid
    std::string train_manifest;
    std::string val_manifest;
    std::string test_manifest;                                   // corruption_grid
    std::vector<std::pair<std::string, std::string>> test_sets;  // cross_domain: name -> path

    // ablation: ordered categories, each one manifest; case i trains on the
    // union of the others and tests on category i
    std::vector<std::pair<std::string, std::string>> categories;
};

struct ProtocolCell {
    std::string name;
    std::string checkpoint_path;
    MetricsReport report;
};

struct ProtocolReport {
    ProtocolKind kind;
    std::vector<ProtocolCell> cells;
};

namespace protocol_detail {

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write: " + path);
    out << text;
}

inline std::string cell_slug(std::string name) {
    for (char& c : name)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return name;
}

inline void write_cell(const std::string& out_dir, const ProtocolCell& cell) {
    const std::string base = (std::filesystem::path(out_dir) / cell_slug(cell.name)).string();
    write_text(base + ".metrics.json", cell.report.to_json() + "\n");
    if (!cell.report.roc.empty()) write_text(base + ".roc.csv", cell.report.roc_csv());
}

inline void write_grid(const std::string& out_dir, const ProtocolReport& report) {
    nlohmann::ordered_json grid;
    grid["protocol"] = report.kind == ProtocolKind::CrossDomain      ? "cross_domain"
                       : report.kind == ProtocolKind::CorruptionGrid ? "corruption_grid"
                                                                     : "ablation";
    grid["cells"] = nlohmann::ordered_json::array();
    std::string csv = "cell,precision,recall,f1,auc,accuracy\n";
    for (const auto& cell : report.cells) {
        nlohmann::ordered_json c;
        c["name"] = cell.name;
        c["checkpoint"] = cell.checkpoint_path;
        c["metrics"] = nlohmann::ordered_json::parse(cell.report.to_json());
        grid["cells"].push_back(c);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", cell.name.c_str(),
                      cell.report.precision, cell.report.recall, cell.report.f1,
                      cell.report.auc_defined ? cell.report.auc : 0.5, cell.report.accuracy);
        csv += buf;
    }
    write_text((std::filesystem::path(out_dir) / "grid.json").string(), grid.dump(2) + "\n");
    write_text((std::filesystem::path(out_dir) / "grid.csv").string(), csv);
}

// Union of category manifests, re-rooted to absolute paths.
inline DatasetManifest absolute_union(const std::vector<DatasetManifest>& parts) {
    DatasetManifest u;
    u.root = "";
    u.split = "train";
    for (const auto& part : parts)
        for (size_t i = 0; i < part.entries.size(); ++i)
            u.entries.push_back({part.resolve(i), part.entries[i].label});
    return u;
}

// Stratified seeded split of a manifest into train/val.
inline std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& m,
                                                                   double val_frac,
                                                                   uint64_t seed) {
    std::vector<ManifestEntry> by_class[2];
    for (const auto& e : m.entries) by_class[e.label].push_back(e);
    RngState rng = derive_rng(seed, "protocol-val-split");
    DatasetManifest train_m, val_m;
    train_m.root = m.root;
    train_m.split = "train";
    val_m.root = m.root;
    val_m.split = "val";
    for (auto& cls : by_class) {
        for (size_t i = cls.size(); i > 1; --i)
            std::swap(cls[i - 1],
                      cls[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
        const size_t n_val = static_cast<size_t>(static_cast<double>(cls.size()) * val_frac);
        for (size_t i = 0; i < cls.size(); ++i)
            (i < n_val ? val_m : train_m).entries.push_back(cls[i]);
    }
    return {train_m, val_m};
}

} // namespace protocol_detail

// Runs one protocol end to end. Overlapping train/test paths are a hard
// error; every cell's metrics equal an independent evaluate() call with the
// same seeds.
inline ProtocolReport run_protocol(const ProtocolSpec& spec) {
    std::filesystem::create_directories(spec.out_dir);
    ProtocolReport report;
    report.kind = spec.kind;

    auto ensure_disjoint = [](const DatasetManifest& a, const DatasetManifest& b,
                              const char* what) {
        try {
            train_detail::check_disjoint(a, b, what);
        } catch (const ContractError& e) {
            throw ProtocolError(e.what());
        }
    };

    auto train_and_save = [&](const DatasetManifest& train_m, const DatasetManifest& val_m,
                              const std::string& tag) {
        Checkpoint ckpt = train(spec.model, spec.train, train_m, val_m);
        const std::string path =
            (std::filesystem::path(spec.out_dir) / (protocol_detail::cell_slug(tag) + ".ckpt"))
                .string();
        save_checkpoint(ckpt, path);
        return std::make_pair(ckpt, path);
    };

    switch (spec.kind) {
        case ProtocolKind::CorruptionGrid: {
            DatasetManifest train_m = load_manifest(spec.train_manifest, "train");
            DatasetManifest val_m = load_manifest(spec.val_manifest, "val");
            DatasetManifest test_m = load_manifest(spec.test_manifest, "test");
            ensure_disjoint(train_m, test_m, "protocol train/test");
            auto [ckpt, path] = train_and_save(train_m, val_m, "grid_model");
            for (CorruptionKind kind : {CorruptionKind::None, CorruptionKind::Blur,
                                        CorruptionKind::Noise, CorruptionKind::Compress}) {
                CorruptionSpec c = spec.corruption;
                c.kind = kind;
                ProtocolCell cell;
                cell.name = to_string(kind);
                cell.checkpoint_path = path;
                cell.report = evaluate(ckpt, test_m, c, spec.train.seed);
                protocol_detail::write_cell(spec.out_dir, cell);
                report.cells.push_back(std::move(cell));
            }
            break;
        }
        case ProtocolKind::CrossDomain: {
            DatasetManifest train_m = load_manifest(spec.train_manifest, "train");
            DatasetManifest val_m = load_manifest(spec.val_manifest, "val");
            auto [ckpt, path] = train_and_save(train_m, val_m, "cross_model");
            for (const auto& [name, manifest_path] : spec.test_sets) {
                DatasetManifest test_m = load_manifest(manifest_path, "test");
                ensure_disjoint(train_m, test_m, "protocol train/test");
                CorruptionSpec none;
                ProtocolCell cell;
                cell.name = name;
                cell.checkpoint_path = path;
                cell.report = evaluate(ckpt, test_m, none, spec.train.seed);
                protocol_detail::write_cell(spec.out_dir, cell);
                report.cells.push_back(std::move(cell));
            }
            break;
        }
        case ProtocolKind::Ablation: {
            if (spec.categories.size() < 2)
                throw ContractError("ablation: needs at least two category manifests");
            std::vector<DatasetManifest> cats;
            for (const auto& [name, path] : spec.categories)
                cats.push_back(load_manifest(path, name));
            for (size_t held_out = 0; held_out < cats.size(); ++held_out) {
                std::vector<DatasetManifest> rest;
                std::string train_names;
                for (size_t i = 0; i < cats.size(); ++i) {
                    if (i == held_out) continue;
                    rest.push_back(cats[i]);
                    if (!train_names.empty()) train_names += "+";
                    train_names += spec.categories[i].first;
                }
                DatasetManifest united = protocol_detail::absolute_union(rest);
                ensure_disjoint(united, cats[held_out], "ablation train/test");
                auto [train_m, val_m] = protocol_detail::split_train_val(
                    united, 0.15, spec.train.seed + held_out);
                const std::string case_name =
                    "Case " + std::string(1, static_cast<char>('A' + held_out));
                auto [ckpt, path] = train_and_save(train_m, val_m, case_name);
                CorruptionSpec none;
                ProtocolCell cell;
                cell.name = case_name + " (train " + train_names + ", test " +
                            spec.categories[held_out].first + ")";
                cell.checkpoint_path = path;
                cell.report = evaluate(ckpt, cats[held_out], none, spec.train.seed);
                protocol_detail::write_cell(spec.out_dir, cell);
                report.cells.push_back(std::move(cell));
            }
            break;
        }
    }
    protocol_detail::write_grid(spec.out_dir, report);
    return report;
}

} // namespace texvit
