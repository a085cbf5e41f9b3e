#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace nnwm {

/// splitmix64 generator. Tiny, fast, and bit-reproducible across platforms,
/// which is all the library needs: every stochastic stage (weight init,
/// shuffling, dropout, carrier synthesis) draws from its own seeded stream.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo,hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0,n). Modulo bias is negligible for n << 2^64.
    std::uint64_t next_index(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; one pair per two draws, cached spare.
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Purpose tags for deriving independent streams from one experiment seed.
enum class RngStream : std::uint64_t {
    init = 1,
    shuffle = 2,
    dropout = 3,
    carrier = 4,
    synthetic = 5,
    split = 6,
    sta_key = 7,
};

/// One stream per purpose: mixing the tag into the seed keeps streams
/// decorrelated while staying replayable from a single recorded seed.
inline SplitMix64 make_stream(std::uint64_t seed, RngStream purpose) {
    return SplitMix64(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(purpose) + 1)));
}

template <typename Index>
inline void shuffle_indices(std::vector<Index>& idx, SplitMix64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_index(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

} // namespace nnwm
