#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dprgmi/errors.hpp"

namespace dprgmi {

struct BootstrapResult {
    double point = 0.0;   // statistic on the full sample
    double mean = 0.0;    // mean over defined resamples
    double std = 0.0;     // sample std over defined resamples
    double ci_low = 0.0;  // 2.5th percentile
    double ci_high = 0.0; // 97.5th percentile
    std::uint64_t resamples = 0;  // B
    std::uint64_t dropped = 0;    // resamples where some statistic was undefined
};

// A statistic evaluated on an index multiset into the test set. Returning
// nullopt marks the resample as undefined (e.g. single-class AUROC).
using Statistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

// Paired nonparametric bootstrap: B resamples of size n with replacement,
// resample b drawn from substream (seed, "bootstrap", b). Every statistic
// sees the same index multiset per resample. A resample on which any
// statistic is undefined is dropped for all of them, keeping the pairing;
// more than 10% drops raises NumericError.
std::vector<BootstrapResult> bootstrap_paired(std::span<const Statistic> statistics,
                                              std::size_t n, std::uint64_t resamples,
                                              std::uint64_t seed);

BootstrapResult bootstrap(const Statistic& statistic, std::size_t n, std::uint64_t resamples,
                          std::uint64_t seed);

// 1-based ranks with average ranks on ties.
std::vector<double> rank_with_ties(std::span<const double> values);

// Pearson correlation of tie-averaged ranks. A constant input vector makes
// the correlation undefined and raises NumericError.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace dprgmi
