#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dprgmi {

// All randomness in the project derives from one master seed through labeled
// substreams. A substream is identified by (master seed, tag, counter) where
// the tag is one of the domain strings "init", "poisson", "noise",
// "bootstrap", "synth". Substream seeds are 64-bit hashes of the triple, so
// streams with different tags or counters never share state.
std::uint64_t substream_seed(std::uint64_t master_seed, std::string_view tag,
                             std::uint64_t counter);

// splitmix64 finalizer; used both for seed hashing and for seeding.
std::uint64_t mix64(std::uint64_t x);

// Deterministic random stream for one substream. Uniform and Gaussian draws
// are generated with fixed algorithms (53-bit mantissa uniforms, Box-Muller)
// so the value sequence depends only on the substream identity, not on
// standard-library distribution internals.
class SubstreamRng {
public:
    SubstreamRng(std::uint64_t master_seed, std::string_view tag, std::uint64_t counter)
        : engine_(substream_seed(master_seed, tag, counter)) {}

    explicit SubstreamRng(std::uint64_t raw_seed) : engine_(raw_seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n); bitmask rejection.
    std::uint64_t bounded_u64(std::uint64_t n);

    // Standard normal via Box-Muller; the spare value is cached.
    double gaussian();

    // Fills `out` with standard normals in index order.
    void gaussian_fill(std::vector<double>& out);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dprgmi
