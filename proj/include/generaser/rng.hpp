#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace generaser {

// splitmix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// mt19937_64 with hand-rolled uniform/normal draws. The standard engine is
// bit-portable but the standard distributions are not, and dataset
// generation, training, and sampling all promise bit-reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive, by rejection (unbiased).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % span + 1) % span;
        std::uint64_t draw = next_u64();
        while (draw > limit) draw = next_u64();
        return lo + static_cast<std::int64_t>(draw % span);
    }

    // Standard normal via Box-Muller; one pair per two calls.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Independent child stream; deterministic in (parent seed, key).
    Rng fork(std::uint64_t key) const { return Rng(mix64(seed_base_ ^ mix64(key))); }

    static Rng with_base(std::uint64_t seed) {
        Rng r(mix64(seed));
        r.seed_base_ = seed;
        return r;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_base_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Deriving a stream for (seed, purpose, index) without sharing state.
inline Rng stream_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
    return Rng(mix64(mix64(seed ^ mix64(purpose)) ^ index));
}

}  // namespace generaser
