#pragma once

// Test-time corruption operators: Gaussian blur (7x7, sigma 25), additive
// Gaussian noise (std 0.2) and a codec-free block-DCT quality degradation
// standing in for "compressed 3x".

#include <array>
#include <string>

#include "texvit/rng.hpp"
#include "texvit/tensor.hpp"

namespace texvit {

enum class CorruptionKind { None, Blur, Noise, Compress };

inline std::string to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::None: return "none";
        case CorruptionKind::Blur: return "blur";
        case CorruptionKind::Noise: return "noise";
        case CorruptionKind::Compress: return "compress";
    }
    return "none";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
    if (s == "none") return CorruptionKind::None;
    if (s == "blur") return CorruptionKind::Blur;
    if (s == "noise") return CorruptionKind::Noise;
    if (s == "compress") return CorruptionKind::Compress;
    throw ContractError("unknown corruption kind: " + s);
}

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::None;
    int blur_kernel = 7;
    double blur_sigma = 25.0;
    double noise_mean = 0.0;
    double noise_std = 0.2;
    bool noise_clamp = false;
    int compress_factor = 3;

    void validate() const {
        if (blur_kernel < 1 || blur_kernel % 2 == 0)
            throw ContractError("corruption: blur kernel must be odd and positive");
        if (blur_sigma <= 0.0) throw ContractError("corruption: blur sigma must be positive");
        if (noise_std < 0.0) throw ContractError("corruption: noise std must be >= 0");
        if (compress_factor < 1) throw ContractError("corruption: compress factor must be >= 1");
    }
};

namespace corrupt_detail {

inline std::vector<double> gaussian_kernel_1d(int k, double sigma) {
    std::vector<double> w(static_cast<size_t>(k));
    const int r = k / 2;
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        const double d = static_cast<double>(i - r);
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

// reflect-101 index mirroring
inline int64_t reflect(int64_t i, int64_t n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

} // namespace corrupt_detail

// Separable normalized Gaussian with reflect padding; kernel weights sum to 1.
inline Tensor<float> gaussian_blur(const Tensor<float>& img, int kernel = 7, double sigma = 25.0) {
    if (kernel % 2 == 0 || kernel < 1) throw ContractError("gaussian_blur: kernel must be odd");
    if (sigma <= 0.0) throw ContractError("gaussian_blur: sigma must be positive");
    if (img.rank() != 3) throw ShapeError("gaussian_blur: expected (C,H,W)");
    const auto w1 = corrupt_detail::gaussian_kernel_1d(kernel, sigma);
    const int r = kernel / 2;
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<float> tmp(img.shape());
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t)
                    acc += w1[static_cast<size_t>(t + r)] *
                           img.at({ci, y, corrupt_detail::reflect(x + t, w)});
                tmp.at({ci, y, x}) = static_cast<float>(acc);
            }
    Tensor<float> out(img.shape());
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t)
                    acc += w1[static_cast<size_t>(t + r)] *
                           tmp.at({ci, corrupt_detail::reflect(y + t, h), x});
                out.at({ci, y, x}) = static_cast<float>(acc);
            }
    return out;
}

// i.i.d. Gaussian noise in [0,1] value space; clamping is opt-in so the stated
// noise statistics stay exact.
inline Tensor<float> add_noise(const Tensor<float>& img, double mean, double stddev,
                               RngState& rng, bool clamp = false) {
    if (stddev < 0.0) throw ContractError("add_noise: std must be >= 0");
    Tensor<float> out = img;
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = static_cast<double>(out[i]) + mean + stddev * rng.gaussian();
        if (clamp) v = std::min(1.0, std::max(0.0, v));
        out[i] = static_cast<float>(v);
    }
    return out;
}

namespace corrupt_detail {

// Standard JPEG luminance quantization table (Annex K).
inline const std::array<int, 64>& jpeg_luminance_table() {
    static const std::array<int, 64> t = {
        16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
        14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
        18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
        49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
    return t;
}

// Orthonormal DCT-II basis, 8x8.
inline const std::array<double, 64>& dct_basis() {
    static const std::array<double, 64> c = [] {
        std::array<double, 64> b{};
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x)
                b[static_cast<size_t>(u * 8 + x)] =
                    (u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                    std::cos((2.0 * x + 1.0) * u * M_PI / 16.0);
        return b;
    }();
    return c;
}

inline void dct8x8(const double in[64], double out[64], bool inverse) {
    const auto& c = dct_basis();
    double tmp[64];
    // rows
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int t = 0; t < 8; ++t)
                acc += in[i * 8 + t] * (inverse ? c[static_cast<size_t>(t * 8 + j)]
                                                : c[static_cast<size_t>(j * 8 + t)]);
            tmp[i * 8 + j] = acc;
        }
    // columns
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int t = 0; t < 8; ++t)
                acc += (inverse ? c[static_cast<size_t>(t * 8 + i)]
                                : c[static_cast<size_t>(i * 8 + t)]) *
                       tmp[t * 8 + j];
            out[i * 8 + j] = acc;
        }
}

} // namespace corrupt_detail

// Quantization table for quality Q in [1,100], libjpeg scaling convention.
inline std::array<int, 64> jpeg_quant_table(int quality) {
    quality = std::min(100, std::max(1, quality));
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<int, 64> q{};
    const auto& base = corrupt_detail::jpeg_luminance_table();
    for (int i = 0; i < 64; ++i)
        q[static_cast<size_t>(i)] =
            std::min(255, std::max(1, (base[static_cast<size_t>(i)] * scale + 50) / 100));
    return q;
}

// Per 8x8 block, per channel: forward DCT, quantize with the luminance table
// scaled for quality 100/factor, dequantize, inverse DCT, snap to the 8-bit
// grid. Edge blocks are padded by replication and cropped back.
inline Tensor<float> compress(const Tensor<float>& img, int factor = 3) {
    if (factor < 1) throw ContractError("compress: factor must be >= 1");
    if (img.rank() != 3) throw ShapeError("compress: expected (C,H,W)");
    const int quality = std::max(1, static_cast<int>(std::lround(100.0 / factor)));
    const auto q = jpeg_quant_table(quality);
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<float> out(img.shape());
    double block[64], coef[64], rec[64];
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t by = 0; by < h; by += 8)
            for (int64_t bx = 0; bx < w; bx += 8) {
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        const int64_t sy = std::min<int64_t>(by + y, h - 1);
                        const int64_t sx = std::min<int64_t>(bx + x, w - 1);
                        block[y * 8 + x] =
                            static_cast<double>(img.at({ci, sy, sx})) * 255.0 - 128.0;
                    }
                corrupt_detail::dct8x8(block, coef, false);
                for (int i = 0; i < 64; ++i) {
                    const double step = static_cast<double>(q[static_cast<size_t>(i)]);
                    coef[i] = std::round(coef[i] / step) * step;
                }
                corrupt_detail::dct8x8(coef, rec, true);
                for (int y = 0; y < 8 && by + y < h; ++y)
                    for (int x = 0; x < 8 && bx + x < w; ++x) {
                        double v = std::round(rec[y * 8 + x] + 128.0) / 255.0;
                        out.at({ci, by + y, bx + x}) =
                            static_cast<float>(std::min(1.0, std::max(0.0, v)));
                    }
            }
    return out;
}

// Applies one corruption to a (3,H,W) image; noise draws from `rng`.
inline Tensor<float> apply_corruption(const Tensor<float>& img, const CorruptionSpec& spec,
                                      RngState& rng) {
    spec.validate();
    switch (spec.kind) {
        case CorruptionKind::None: return img;
        case CorruptionKind::Blur: return gaussian_blur(img, spec.blur_kernel, spec.blur_sigma);
        case CorruptionKind::Noise:
            return add_noise(img, spec.noise_mean, spec.noise_std, rng, spec.noise_clamp);
        case CorruptionKind::Compress: return compress(img, spec.compress_factor);
    }
    return img;
}

} // namespace texvit
