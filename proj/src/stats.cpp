#include "dprgmi/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dprgmi/parallel.hpp"
#include "dprgmi/rng.hpp"

namespace dprgmi {

namespace {

double percentile(std::vector<double> sorted, double p) {
    // `sorted` must be ascending; linear interpolation between order stats.
    if (sorted.empty()) return 0.0;
    if (sorted.size() == 1) return sorted[0];
    double pos = p * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo >= sorted.size() - 1) return sorted.back();
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

std::vector<BootstrapResult> bootstrap_paired(std::span<const Statistic> statistics,
                                              std::size_t n, std::uint64_t resamples,
                                              std::uint64_t seed) {
    if (statistics.empty()) throw ConfigError("bootstrap: no statistics given");
    if (n < 1) throw ConfigError("bootstrap: n must be >= 1");
    if (resamples < 1) throw ConfigError("bootstrap: B must be >= 1");

    const std::size_t n_stats = statistics.size();

    std::vector<std::size_t> identity(n);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    std::vector<double> points(n_stats);
    for (std::size_t s = 0; s < n_stats; ++s) {
        auto v = statistics[s](identity);
        if (!v) throw NumericError("bootstrap: statistic " + std::to_string(s) +
                                   " undefined on the full sample");
        points[s] = *v;
    }

    // values[b] holds one entry per statistic, or empty when dropped.
    std::vector<std::vector<double>> values(resamples);
    parallel_for(resamples, [&](std::size_t b) {
        SubstreamRng rng(seed, "bootstrap", b);
        std::vector<std::size_t> indices(n);
        for (std::size_t i = 0; i < n; ++i) {
            indices[i] = static_cast<std::size_t>(rng.bounded_u64(n));
        }
        std::vector<double> row;
        row.reserve(n_stats);
        for (std::size_t s = 0; s < n_stats; ++s) {
            auto v = statistics[s](indices);
            if (!v) {
                row.clear();
                break;
            }
            row.push_back(*v);
        }
        values[b] = std::move(row);
    });

    std::uint64_t dropped = 0;
    for (const auto& row : values) {
        if (row.empty()) ++dropped;
    }
    if (10 * dropped > resamples) {
        throw NumericError("bootstrap: " + std::to_string(dropped) + " of " +
                           std::to_string(resamples) + " resamples undefined (over 10%)");
    }
    const std::uint64_t defined = resamples - dropped;

    std::vector<BootstrapResult> out(n_stats);
    for (std::size_t s = 0; s < n_stats; ++s) {
        std::vector<double> vals;
        vals.reserve(defined);
        for (const auto& row : values) {
            if (!row.empty()) vals.push_back(row[s]);
        }
        BootstrapResult& r = out[s];
        r.point = points[s];
        r.resamples = resamples;
        r.dropped = dropped;
        // Deviations about vals[0] keep a constant statistic at exactly zero
        // spread instead of picking up rounding from the mean.
        const double shift = vals[0];
        double dmean = 0.0;
        for (double v : vals) dmean += v - shift;
        dmean /= static_cast<double>(vals.size());
        r.mean = shift + dmean;
        double ss = 0.0;
        for (double v : vals) {
            double d = (v - shift) - dmean;
            ss += d * d;
        }
        r.std = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
        std::sort(vals.begin(), vals.end());
        r.ci_low = percentile(vals, 0.025);
        r.ci_high = percentile(std::move(vals), 0.975);
    }
    return out;
}

BootstrapResult bootstrap(const Statistic& statistic, std::size_t n, std::uint64_t resamples,
                          std::uint64_t seed) {
    std::vector<Statistic> one{statistic};
    return bootstrap_paired(one, n, resamples, seed)[0];
}

std::vector<double> rank_with_ties(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        // tied block [i, j]; average 1-based rank
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ConfigError("spearman: length mismatch");
    if (x.size() < 2) throw ConfigError("spearman: need at least 2 points");
    for (double v : x) {
        if (!std::isfinite(v)) throw ConfigError("spearman: non-finite input");
    }
    for (double v : y) {
        if (!std::isfinite(v)) throw ConfigError("spearman: non-finite input");
    }

    std::vector<double> rx = rank_with_ties(x);
    std::vector<double> ry = rank_with_ties(y);
    const double n = static_cast<double>(x.size());
    double mean = (n + 1.0) / 2.0;  // mean rank is the same for both vectors

    double num = 0.0, dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double a = rx[i] - mean;
        double b = ry[i] - mean;
        num += a * b;
        dx += a * a;
        dy += b * b;
    }
    if (dx == 0.0 || dy == 0.0) {
        throw NumericError("spearman: correlation undefined for constant input");
    }
    return num / std::sqrt(dx * dy);
}

}  // namespace dprgmi
