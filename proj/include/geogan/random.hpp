#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace geogan {

/// Seeded random stream. All stochastic code takes one of these by reference
/// so a run is a pure function of its root seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    /// Uniform integer in [lo, hi].
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t next() { return engine_(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates with our own draws so the order does not depend on the
        // standard library's shuffle implementation.
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(engine_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Stable 64-bit FNV-1a hash.
std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 1469598103934665603ULL);

/// Child seed for a named consumer, e.g. derive_seed(seed, "wss").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace geogan
