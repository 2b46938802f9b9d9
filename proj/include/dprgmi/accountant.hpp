#pragma once

#include <cstdint>
#include <vector>

#include "dprgmi/errors.hpp"

namespace dprgmi {

// Renyi-DP curve of a Poisson-subsampled Gaussian mechanism. `per_step`
// holds the single-step RDP value at each order; `values` holds the
// composition over `steps_composed` steps (values = per_step * steps).
// A curve fresh from the mechanism has steps_composed = 0, with `values`
// showing the single-step curve; compose() extends the step count.
struct RdpCurve {
    std::vector<double> orders;
    std::vector<double> values;
    std::vector<double> per_step;
    std::uint64_t steps_composed = 0;
};

// Integer orders {2..64} plus {128, 256}. Covers the minimizer range for
// eps in roughly [0.1, 10] at practical (q, sigma, T).
std::vector<double> default_rdp_orders();

// Single-step RDP of the subsampled Gaussian mechanism with sampling rate q
// and noise multiplier sigma. q = 1 uses the analytic Gaussian value
// alpha / (2 sigma^2); q < 1 uses the binomial-expansion log-moment upper
// bound at integer orders, evaluated in log-space.
RdpCurve rdp_subsampled_gaussian(double q, double sigma, const std::vector<double>& orders);

// Additive composition: the returned curve covers `steps` more steps of the
// underlying per-step mechanism than `curve` already does.
RdpCurve compose(const RdpCurve& curve, std::uint64_t steps);

struct EpsResult {
    double epsilon = 0.0;
    double best_order = 0.0;
};

// Classic RDP -> (eps, delta) conversion: eps = min_a [eps_a + log(1/delta)/(a-1)].
// Ties break toward the smaller order.
EpsResult rdp_to_eps(const RdpCurve& curve, double delta);

// Convenience: eps of the subsampled Gaussian composed over T steps.
double accountant_epsilon(double q, double sigma, std::uint64_t steps, double delta);

// Bisection over sigma in [0.3, 500] (upper bound expanded as needed) so that
// the accountant epsilon lands in [eps_target - 1e-3, eps_target]. If even
// the sigma floor over-delivers privacy (eps(0.3) below the window), the
// floor is returned; an unreachable target raises NumericError with the
// bracket.
double calibrate_sigma(double eps_target, double delta, double q, std::uint64_t steps);

}  // namespace dprgmi
