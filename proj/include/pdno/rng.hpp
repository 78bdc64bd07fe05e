#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace pdno {

// splitmix64 finalizer; decorrelates nearby integer seeds before they reach the engine.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t combine_seeds(std::uint64_t a, std::uint64_t b) noexcept {
    return mix_seed(a ^ mix_seed(b + 0x632be59bd9b4e019ULL));
}

/// 64-bit engine plus a standard normal source. Deterministic for a given seed within one build.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

    double normal() { return normal_(engine_); }

    void fill_normal(std::vector<double>& out) {
        for (auto& v : out) v = normal_(engine_);
    }

    std::vector<double> normals(std::size_t n) {
        std::vector<double> out(n);
        fill_normal(out);
        return out;
    }

    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace pdno
