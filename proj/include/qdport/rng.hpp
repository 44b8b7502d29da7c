#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace qdport {

/// SplitMix64 finalizer; used to expand one master seed into independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for the named sub-stream of a master seed. Distinct names give unrelated streams,
/// so adding draws to one consumer never perturbs another.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char ch : name) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(master ^ splitmix64(h));
}

/// Seeded random stream. The distributions are implemented here rather than taken from
/// <random> so that draws are identical across standard library implementations and the
/// whole state is the engine state (no cached normal deviates), which keeps checkpoints exact.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [lo, hi], rejection-sampled (no modulo bias).
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        if (hi < lo) throw ConfigError("uniform_int: empty range");
        const std::uint64_t span = hi - lo;
        if (span == ~0ULL) return engine_();
        const std::uint64_t n = span + 1;
        const std::uint64_t limit = ~0ULL - (~0ULL % n);
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return lo + r % n;
    }

    /// Standard normal via Box-Muller; consumes exactly two engine outputs per call.
    double normal() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw DataError("rng: malformed serialized engine state");
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace qdport
