#include "dprgmi/rng.hpp"

#include <cmath>
#include <numbers>

namespace dprgmi {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t master_seed, std::string_view tag,
                             std::uint64_t counter) {
    std::uint64_t h = mix64(master_seed);
    for (unsigned char c : tag) {
        h = mix64(h ^ c);
    }
    return mix64(h ^ counter);
}

std::uint64_t SubstreamRng::bounded_u64(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t mask = n - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
        std::uint64_t v = engine_() & mask;
        if (v < n) return v;
    }
}

double SubstreamRng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on two fresh uniforms; u1 is kept away from 0.
    double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
}

void SubstreamRng::gaussian_fill(std::vector<double>& out) {
    for (double& v : out) v = gaussian();
}

}  // namespace dprgmi
