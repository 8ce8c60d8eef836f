#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "texvit/tensor.hpp"

namespace texvit {

// Deterministic PRNG used everywhere randomness is needed. The core generator
// is splitmix64 (Steele, Lea, Flood 2014): a 64-bit counter advanced by the
// golden-ratio increment and finalized with a mix function. Identical seeds
// produce identical streams on every platform.
class RngState {
public:
    explicit RngState(uint64_t seed = 0) : seed_(seed), state_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t n) { // [0, n)
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    // Standard normal via the Box-Muller transform:
    //   z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)
    // with u1 in (0,1]. The pair is consumed in order; the sine half is cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Gamma(alpha, 1) by Marsaglia-Tsang squeeze; alpha < 1 uses the
    // Gamma(alpha+1) boost U^(1/alpha).
    double gamma(double alpha) {
        if (alpha <= 0.0) throw ContractError("gamma: alpha must be positive");
        if (alpha < 1.0) {
            double u = 1.0 - uniform();
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = gaussian();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = 1.0 - uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        return x / (x + y);
    }

    // Normal truncated to [-2, 2] standard deviations, by rejection.
    double truncated_gaussian(double stddev) {
        for (;;) {
            double z = gaussian();
            if (z >= -2.0 && z <= 2.0) return z * stddev;
        }
    }

private:
    uint64_t seed_ = 0;
    uint64_t state_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

// Sub-seed derivation: every independent consumer of randomness (augmentation
// worker, noise injector, weight init, ...) draws from
//   derive_rng(seed, purpose, index)
// so parallel and serial schedules see identical streams.
inline RngState derive_rng(uint64_t seed, std::string_view purpose, uint64_t index = 0) {
    uint64_t h = seed ^ fnv1a64(purpose);
    h += 0x9E3779B97F4A7C15ull * (index + 1);
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
    h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
    return RngState(h ^ (h >> 31));
}

template <typename T>
Tensor<T> rng_uniform(RngState& rng, Shape shape, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> rng_gaussian(RngState& rng, Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(mean + stddev * rng.gaussian());
    return t;
}

} // namespace texvit
