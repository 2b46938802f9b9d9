#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "dprgmi/rng.hpp"

using namespace dprgmi;

TEST_CASE("substream identity determines the seed") {
    CHECK(substream_seed(42, "noise", 3) == substream_seed(42, "noise", 3));
    CHECK(substream_seed(42, "noise", 3) != substream_seed(42, "noise", 4));
    CHECK(substream_seed(42, "noise", 3) != substream_seed(42, "poisson", 3));
    CHECK(substream_seed(42, "noise", 3) != substream_seed(43, "noise", 3));
}

TEST_CASE("identical substreams replay the same sequence") {
    SubstreamRng a(7, "init", 0);
    SubstreamRng b(7, "init", 0);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("differently tagged substreams are disjoint") {
    SubstreamRng noise(7, "noise", 12);
    SubstreamRng poisson(7, "poisson", 12);
    bool any_diff = false;
    for (int i = 0; i < 16; ++i) any_diff |= noise.next_u64() != poisson.next_u64();
    CHECK(any_diff);
}

TEST_CASE("uniform stays in [0, 1)") {
    SubstreamRng rng(1, "synth", 0);
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("bounded draws are in range and roughly uniform") {
    SubstreamRng rng(3, "bootstrap", 1);
    const std::uint64_t n = 10;
    std::vector<int> counts(n, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        std::uint64_t v = rng.bounded_u64(n);
        REQUIRE(v < n);
        ++counts[v];
    }
    for (int c : counts) {
        CHECK(c > draws / 10 * 0.9);
        CHECK(c < draws / 10 * 1.1);
    }
}

TEST_CASE("gaussian moments match a standard normal") {
    SubstreamRng rng(11, "noise", 0);
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double g = rng.gaussian();
        sum += g;
        sum_sq += g * g;
    }
    double mean = sum / n;
    double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("gaussian_fill replays gaussian() in index order") {
    SubstreamRng a(5, "noise", 9);
    SubstreamRng b(5, "noise", 9);
    std::vector<double> filled(257);
    a.gaussian_fill(filled);
    for (double v : filled) CHECK(v == b.gaussian());
}

TEST_CASE("mix64 separates neighbouring inputs") {
    CHECK(mix64(1) != mix64(2));
    CHECK(mix64(0) != 0);
}
