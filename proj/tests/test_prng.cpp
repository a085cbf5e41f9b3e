#include <catch2/catch_amalgamated.hpp>

#include "nnwm/prng.hpp"

using namespace nnwm;

TEST_CASE("splitmix64 streams are deterministic and purpose-separated") {
    SplitMix64 a = make_stream(42, RngStream::init);
    SplitMix64 b = make_stream(42, RngStream::init);
    SplitMix64 c = make_stream(42, RngStream::shuffle);
    bool diverged = false;
    for (int i = 0; i < 100; ++i) {
        const std::uint64_t x = a.next_u64();
        REQUIRE(x == b.next_u64());
        if (x != c.next_u64()) diverged = true;
    }
    REQUIRE(diverged);
}

TEST_CASE("uniform doubles stay in [0,1)") {
    SplitMix64 rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.next_double();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("gaussian moments are sane") {
    SplitMix64 rng(3);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.next_gaussian();
        sum += g;
        sum2 += g * g;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("shuffle is a permutation") {
    std::vector<int> v(257);
    for (int i = 0; i < 257; ++i) v[i] = i;
    SplitMix64 rng(9);
    shuffle_indices(v, rng);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 257; ++i) REQUIRE(sorted[i] == i);
    REQUIRE(v != sorted); // astronomically unlikely to be identity
}
