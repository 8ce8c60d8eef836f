#pragma once

// Dataset plumbing: manifest CSV IO, the synthetic smooth-vs-textured corpus,
// and the augmentation suite (mixup, cutmix, RandAugment subset, random
// erasing).

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "texvit/corrupt.hpp"
#include "texvit/image.hpp"
#include "texvit/rng.hpp"

namespace texvit {

struct ManifestEntry {
    std::string path; // relative to the manifest root
    int label = 0;    // 0 real, 1 fake
};

struct DatasetManifest {
    std::string root;           // directory resolved against entry paths
    std::string split = "all";  // train | val | test | all
    std::vector<ManifestEntry> entries;

    std::string resolve(size_t i) const {
        return (std::filesystem::path(root) / entries[i].path).string();
    }
    int64_t size() const { return static_cast<int64_t>(entries.size()); }

    int64_t count_label(int label) const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.label == label ? 1 : 0;
        return n;
    }
};

// One decoded training example. Labels are soft two-vectors so mixup/cutmix
// compose linearly; hard labels are one-hot.
struct Sample {
    Tensor<float> image; // (3,H,W) in [0,1]
    std::array<float, 2> label{1.0f, 0.0f};

    static std::array<float, 2> one_hot(int label) {
        return label == 0 ? std::array<float, 2>{1.0f, 0.0f} : std::array<float, 2>{0.0f, 1.0f};
    }
};

// CSV format: one `relative/path.png,label` per line, UTF-8, LF, no header.
inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest: " + path);
    for (const auto& e : m.entries) out << e.path << "," << e.label << "\n";
}

// Parses and eagerly validates a manifest: every referenced image must exist
// and decode. Duplicate paths and non-{0,1} labels are rejected with the
// offending line number.
inline DatasetManifest load_manifest(const std::string& path, const std::string& split = "all") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("manifest not found: " + path);
    DatasetManifest m;
    m.root = std::filesystem::path(path).parent_path().string();
    m.split = split;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size())
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": malformed row (expected `path,label`)");
        const std::string rel = line.substr(0, comma);
        const std::string lab = line.substr(comma + 1);
        if (lab != "0" && lab != "1")
            throw FormatError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1, got `" +
                              lab + "`");
        if (!seen.insert(rel).second)
            throw FormatError(path + ":" + std::to_string(line_no) + ": duplicate path `" + rel + "`");
        m.entries.push_back({rel, lab == "1" ? 1 : 0});
    }
    for (size_t i = 0; i < m.entries.size(); ++i) {
        const std::string full = m.resolve(i);
        decode_image_u8(full); // throws FormatError when missing or undecodable
    }
    return m;
}

// ---- synthetic smooth-vs-textured corpus ------------------------------------

struct SynthResult {
    DatasetManifest train, val, test;
    std::string train_csv, val_csv, test_csv;
    double mean_laplacian_real = 0.0;
    double mean_laplacian_fake = 0.0;
    bool degenerate = false; // smooth_sigma == 0: classes identically distributed
};

namespace data_detail {

// Mean squared 4-neighbour Laplacian response, the texture-energy statistic.
inline double laplacian_energy(const Tensor<float>& img) {
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 1; y + 1 < h; ++y)
            for (int64_t x = 1; x + 1 < w; ++x) {
                const double v = 4.0 * img.at({ci, y, x}) - img.at({ci, y - 1, x}) -
                                 img.at({ci, y + 1, x}) - img.at({ci, y, x - 1}) -
                                 img.at({ci, y, x + 1});
                acc += v * v;
                ++count;
            }
    return count ? acc / static_cast<double>(count) : 0.0;
}

// Band-limited noise field: white Gaussian noise lightly smoothed, then
// renormalized to mean 0.5 / std 0.15 so both classes share first-order
// statistics and differ in spatial correlation only.
inline Tensor<float> noise_field(int size, double smooth_sigma, RngState& rng) {
    Tensor<float> img = rng_gaussian<float>(rng, {3, size, size});
    img = gaussian_blur(img, 3, 0.7);
    if (smooth_sigma > 0.0) {
        const int k = 2 * static_cast<int>(std::ceil(3.0 * smooth_sigma)) + 1;
        img = gaussian_blur(img, std::min(k, 2 * (size / 2) + 1), smooth_sigma);
    }
    double mean = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) mean += img[i];
    mean /= static_cast<double>(img.numel());
    double var = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) {
        const double d = img[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(img.numel());
    const double s = var > 0.0 ? 0.15 / std::sqrt(var) : 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) {
        double v = 0.5 + (img[i] - mean) * s;
        img[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    return img;
}

} // namespace data_detail

// Class 0 ("real"): band-limited noise with high-frequency texture.
// Class 1 ("fake"): the same generative family low-pass filtered with
// smooth_sigma, so long-range texture is broken by construction. Writes PNGs
// and train/val/test manifests (70/15/15: floor train, floor val, remainder
// test) with a stratified seeded shuffle.
inline SynthResult synth_texture_dataset(int n, int size, double smooth_sigma, uint64_t seed,
                                         const std::string& out_dir) {
    if (n < 2 || n % 2 != 0) throw ContractError("synth: n must be even and >= 2");
    if (size < 8) throw ContractError("synth: size must be >= 8");
    if (smooth_sigma < 0.0) throw ContractError("synth: smooth_sigma must be >= 0");
    std::filesystem::create_directories(out_dir);

    SynthResult result;
    result.degenerate = smooth_sigma == 0.0;
    std::vector<ManifestEntry> by_class[2];
    double lap_sum[2] = {0.0, 0.0};
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        RngState rng = derive_rng(seed, "synth", static_cast<uint64_t>(i));
        Tensor<float> img = data_detail::noise_field(size, label == 1 ? smooth_sigma : 0.0, rng);
        lap_sum[label] += data_detail::laplacian_energy(img);
        char name[64];
        std::snprintf(name, sizeof(name), "img_%05d_c%d.png", i, label);
        write_png((std::filesystem::path(out_dir) / name).string(), img);
        by_class[label].push_back({name, label});
    }
    result.mean_laplacian_real = lap_sum[0] / static_cast<double>(n / 2);
    result.mean_laplacian_fake = lap_sum[1] / static_cast<double>(n / 2);

    // stratified seeded shuffle, then class-interleaved assignment
    RngState shuffle_rng = derive_rng(seed, "split");
    for (auto& cls : by_class)
        for (size_t i = cls.size(); i > 1; --i)
            std::swap(cls[i - 1], cls[static_cast<size_t>(shuffle_rng.uniform_int(
                                      static_cast<int64_t>(i)))]);
    std::vector<ManifestEntry> interleaved;
    for (size_t i = 0; i < by_class[0].size(); ++i) {
        interleaved.push_back(by_class[0][i]);
        interleaved.push_back(by_class[1][i]);
    }
    const int n_train = (n * 70) / 100;
    const int n_val = (n * 15) / 100;
    auto make = [&](int lo, int hi, const std::string& split) {
        DatasetManifest m;
        m.root = out_dir;
        m.split = split;
        for (int i = lo; i < hi; ++i) m.entries.push_back(interleaved[static_cast<size_t>(i)]);
        return m;
    };
    result.train = make(0, n_train, "train");
    result.val = make(n_train, n_train + n_val, "val");
    result.test = make(n_train + n_val, n, "test");
    result.train_csv = (std::filesystem::path(out_dir) / "train.csv").string();
    result.val_csv = (std::filesystem::path(out_dir) / "val.csv").string();
    result.test_csv = (std::filesystem::path(out_dir) / "test.csv").string();
    save_manifest(result.train, result.train_csv);
    save_manifest(result.val, result.val_csv);
    save_manifest(result.test, result.test_csv);
    return result;
}

// ---- label-mixing augmentations ----------------------------------------------

inline Sample mixup_with_lambda(const Sample& s1, const Sample& s2, double lambda) {
    require_same_shape(s1.image, s2.image, "mixup");
    Sample out;
    out.image = Tensor<float>(s1.image.shape());
    const float l = static_cast<float>(lambda);
    for (int64_t i = 0; i < out.image.numel(); ++i)
        out.image[i] = l * s1.image[i] + (1.0f - l) * s2.image[i];
    for (int j = 0; j < 2; ++j) out.label[static_cast<size_t>(j)] =
        l * s1.label[static_cast<size_t>(j)] + (1.0f - l) * s2.label[static_cast<size_t>(j)];
    return out;
}

// lambda ~ Beta(alpha, alpha); pixel and label mixing share the same lambda.
inline Sample mixup(const Sample& s1, const Sample& s2, double alpha, RngState& rng) {
    return mixup_with_lambda(s1, s2, rng.beta(alpha, alpha));
}

// Pastes a box of s2 into s1; lambda = 1 - box_area/image_area exactly.
inline Sample cutmix_with_box(const Sample& s1, const Sample& s2, int64_t y0, int64_t x0,
                              int64_t bh, int64_t bw) {
    require_same_shape(s1.image, s2.image, "cutmix");
    const int64_t h = s1.image.dim(1), w = s1.image.dim(2);
    Sample out;
    out.image = s1.image;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = y0; y < y0 + bh; ++y)
            for (int64_t x = x0; x < x0 + bw; ++x)
                out.image.at({c, y, x}) = s2.image.at({c, y, x});
    const double lambda =
        1.0 - static_cast<double>(bh * bw) / static_cast<double>(h * w);
    for (int j = 0; j < 2; ++j)
        out.label[static_cast<size_t>(j)] =
            static_cast<float>(lambda * s1.label[static_cast<size_t>(j)] +
                               (1.0 - lambda) * s2.label[static_cast<size_t>(j)]);
    return out;
}

inline Sample cutmix(const Sample& s1, const Sample& s2, double alpha, RngState& rng) {
    require_same_shape(s1.image, s2.image, "cutmix");
    const int64_t h = s1.image.dim(1), w = s1.image.dim(2);
    const double lam = rng.beta(alpha, alpha);
    const double ratio = std::sqrt(1.0 - lam);
    const int64_t bh = static_cast<int64_t>(std::floor(static_cast<double>(h) * ratio));
    const int64_t bw = static_cast<int64_t>(std::floor(static_cast<double>(w) * ratio));
    if (bh == 0 || bw == 0) return cutmix_with_box(s1, s2, 0, 0, 0, 0);
    const int64_t y0 = rng.uniform_int(h - bh + 1);
    const int64_t x0 = rng.uniform_int(w - bw + 1);
    return cutmix_with_box(s1, s2, y0, x0, bh, bw);
}

// ---- RandAugment (6-op subset) -----------------------------------------------

namespace data_detail {

inline float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

inline Tensor<float> hflip(const Tensor<float>& img) {
    Tensor<float> out(img.shape());
    const int64_t h = img.dim(1), w = img.dim(2);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) out.at({c, y, x}) = img.at({c, y, w - 1 - x});
    return out;
}

// Bilinear sampling with edge clamping.
inline float sample_bilinear(const Tensor<float>& img, int64_t c, double y, double x) {
    const int64_t h = img.dim(1), w = img.dim(2);
    y = std::min(static_cast<double>(h - 1), std::max(0.0, y));
    x = std::min(static_cast<double>(w - 1), std::max(0.0, x));
    const int64_t y0 = static_cast<int64_t>(y), x0 = static_cast<int64_t>(x);
    const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    return static_cast<float>((1 - fy) * ((1 - fx) * img.at({c, y0, x0}) + fx * img.at({c, y0, x1})) +
                              fy * ((1 - fx) * img.at({c, y1, x0}) + fx * img.at({c, y1, x1})));
}

inline Tensor<float> rotate(const Tensor<float>& img, double degrees) {
    const int64_t h = img.dim(1), w = img.dim(2);
    const double rad = degrees * M_PI / 180.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    Tensor<float> out(img.shape());
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                const double sy = cy + dy * std::cos(rad) - dx * std::sin(rad);
                const double sx = cx + dy * std::sin(rad) + dx * std::cos(rad);
                out.at({c, y, x}) = sample_bilinear(img, c, sy, sx);
            }
    return out;
}

inline Tensor<float> translate(const Tensor<float>& img, int64_t dy, int64_t dx) {
    const int64_t h = img.dim(1), w = img.dim(2);
    Tensor<float> out(img.shape());
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t sy = std::min(h - 1, std::max<int64_t>(0, y - dy));
                const int64_t sx = std::min(w - 1, std::max<int64_t>(0, x - dx));
                out.at({c, y, x}) = img.at({c, sy, sx});
            }
    return out;
}

inline Tensor<float> brightness(const Tensor<float>& img, double delta) {
    Tensor<float> out(img.shape());
    for (int64_t i = 0; i < img.numel(); ++i) out[i] = clamp01(img[i] + delta);
    return out;
}

inline Tensor<float> contrast(const Tensor<float>& img, double factor) {
    double mean = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) mean += img[i];
    mean /= static_cast<double>(img.numel());
    Tensor<float> out(img.shape());
    for (int64_t i = 0; i < img.numel(); ++i)
        out[i] = clamp01(mean + (img[i] - mean) * factor);
    return out;
}

inline Tensor<float> posterize(const Tensor<float>& img, int bits) {
    const int shift = 8 - bits;
    Tensor<float> out(img.shape());
    for (int64_t i = 0; i < img.numel(); ++i) {
        const int byte = static_cast<int>(img[i] * 255.0f);
        const int q = (std::min(255, std::max(0, byte)) >> shift) << shift;
        out[i] = static_cast<float>(q) / 255.0f;
    }
    return out;
}

} // namespace data_detail

// n ops drawn uniformly from {hflip, rotate, translate, brightness, contrast,
// posterize}; strength scales with magnitude m in [0,10]; output stays in
// [0,1].
inline Tensor<float> rand_augment(const Tensor<float>& img, int num_ops, int magnitude,
                                  RngState& rng) {
    if (num_ops < 0) throw ContractError("rand_augment: num_ops must be >= 0");
    if (magnitude < 0 || magnitude > 10)
        throw ContractError("rand_augment: magnitude must be in [0,10]");
    const double m = static_cast<double>(magnitude) / 10.0;
    Tensor<float> out = img;
    for (int i = 0; i < num_ops; ++i) {
        switch (rng.uniform_int(6)) {
            case 0: out = data_detail::hflip(out); break;
            case 1: out = data_detail::rotate(out, (rng.uniform() < 0.5 ? -1.0 : 1.0) * 30.0 * m); break;
            case 2: {
                const int64_t span = std::max<int64_t>(1, static_cast<int64_t>(0.3 * m *
                                         static_cast<double>(out.dim(1))));
                out = data_detail::translate(out, rng.uniform_int(2 * span + 1) - span,
                                             rng.uniform_int(2 * span + 1) - span);
                break;
            }
            case 3: out = data_detail::brightness(out, (rng.uniform() < 0.5 ? -1.0 : 1.0) * 0.3 * m); break;
            case 4: out = data_detail::contrast(out, 1.0 + (rng.uniform() < 0.5 ? -1.0 : 1.0) * 0.5 * m); break;
            case 5: out = data_detail::posterize(out, 8 - static_cast<int>(std::lround(4.0 * m))); break;
        }
    }
    return out;
}

// With probability p, fills one rectangle (area fraction drawn from
// [area_lo, area_hi], aspect in [0.3, 1/0.3]) with uniform noise.
inline Tensor<float> random_erase(const Tensor<float>& img, double p, double area_lo,
                                  double area_hi, RngState& rng) {
    if (p < 0.0 || p > 1.0) throw ContractError("random_erase: p must be in [0,1]");
    if (area_lo < 0.0 || area_hi < area_lo || area_hi > 1.0)
        throw ContractError("random_erase: bad area fraction range");
    if (rng.uniform() >= p) return img;
    const int64_t h = img.dim(1), w = img.dim(2);
    for (int attempt = 0; attempt < 32; ++attempt) {
        const double area = static_cast<double>(h * w) * rng.uniform(area_lo, area_hi);
        const double aspect = rng.uniform(0.3, 1.0 / 0.3);
        int64_t eh = static_cast<int64_t>(std::lround(std::sqrt(area * aspect)));
        int64_t ew = static_cast<int64_t>(std::lround(std::sqrt(area / aspect)));
        eh = std::max<int64_t>(1, eh);
        ew = std::max<int64_t>(1, ew);
        if (eh > h || ew > w) continue;
        const int64_t y0 = rng.uniform_int(h - eh + 1);
        const int64_t x0 = rng.uniform_int(w - ew + 1);
        Tensor<float> out = img;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = y0; y < y0 + eh; ++y)
                for (int64_t x = x0; x < x0 + ew; ++x)
                    out.at({c, y, x}) = static_cast<float>(rng.uniform());
        return out;
    }
    return img;
}

} // namespace texvit
