#include "dprgmi/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dprgmi {

std::vector<double> default_rdp_orders() {
    std::vector<double> orders;
    for (int a = 2; a <= 64; ++a) orders.push_back(static_cast<double>(a));
    orders.push_back(128.0);
    orders.push_back(256.0);
    return orders;
}

namespace {

double log_sum_exp(const std::vector<double>& terms) {
    double max_term = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(max_term)) return max_term;
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - max_term);
    return max_term + std::log(sum);
}

double log_binomial(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log Sum_{k=0..alpha} C(alpha,k) (1-q)^(alpha-k) q^k exp(k(k-1)/(2 sigma^2))
double subsampled_log_moment(double q, double sigma, int alpha) {
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(alpha) + 1);
    const double log_q = std::log(q);
    const double log_1mq = std::log1p(-q);
    const double inv_2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int k = 0; k <= alpha; ++k) {
        double t = log_binomial(alpha, k) + (alpha - k) * log_1mq + k * log_q +
                   static_cast<double>(k) * (k - 1) * inv_2s2;
        terms.push_back(t);
    }
    return log_sum_exp(terms);
}

}  // namespace

RdpCurve rdp_subsampled_gaussian(double q, double sigma, const std::vector<double>& orders) {
    if (!(sigma > 0.0)) throw ConfigError("accountant: sigma must be > 0");
    if (!(q > 0.0) || q > 1.0) throw ConfigError("accountant: q must lie in (0, 1]");
    if (orders.empty()) throw ConfigError("accountant: empty order list");

    RdpCurve curve;
    curve.orders = orders;
    curve.per_step.reserve(orders.size());
    for (double alpha : orders) {
        if (!(alpha > 1.0)) throw ConfigError("accountant: orders must be > 1");
        double value;
        if (q == 1.0) {
            value = alpha / (2.0 * sigma * sigma);
        } else {
            double rounded = std::round(alpha);
            if (std::abs(alpha - rounded) > 0.0 || rounded < 2.0) {
                throw ConfigError("accountant: subsampled bound requires integer orders >= 2, got " +
                                  std::to_string(alpha));
            }
            int ia = static_cast<int>(rounded);
            value = subsampled_log_moment(q, sigma, ia) / (alpha - 1.0);
            // True value is >= 0; tiny negatives are rounding residue.
            if (value < 0.0) value = 0.0;
        }
        if (!std::isfinite(value)) {
            throw NumericError("accountant: non-finite RDP value at order " + std::to_string(alpha));
        }
        curve.per_step.push_back(value);
    }
    curve.values = curve.per_step;
    curve.steps_composed = 0;
    return curve;
}

RdpCurve compose(const RdpCurve& curve, std::uint64_t steps) {
    if (curve.orders.empty()) throw NumericError("accountant: compose on empty curve");
    RdpCurve out = curve;
    out.steps_composed = curve.steps_composed + steps;
    out.values.resize(out.per_step.size());
    for (std::size_t i = 0; i < out.per_step.size(); ++i) {
        out.values[i] = out.per_step[i] * static_cast<double>(out.steps_composed);
    }
    return out;
}

EpsResult rdp_to_eps(const RdpCurve& curve, double delta) {
    if (curve.orders.empty() || curve.values.empty()) {
        throw NumericError("accountant: eps conversion on empty curve");
    }
    if (!(delta > 0.0) || !(delta < 1.0)) throw ConfigError("accountant: delta must lie in (0, 1)");
    const double log_inv_delta = -std::log(delta);
    EpsResult best;
    best.epsilon = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < curve.orders.size(); ++i) {
        double alpha = curve.orders[i];
        double eps = curve.values[i] + log_inv_delta / (alpha - 1.0);
        if (eps < best.epsilon) {
            best.epsilon = eps;
            best.best_order = alpha;
        }
    }
    return best;
}

double accountant_epsilon(double q, double sigma, std::uint64_t steps, double delta) {
    RdpCurve curve = rdp_subsampled_gaussian(q, sigma, default_rdp_orders());
    return rdp_to_eps(compose(curve, steps), delta).epsilon;
}

double calibrate_sigma(double eps_target, double delta, double q, std::uint64_t steps) {
    if (!(eps_target > 0.0)) throw ConfigError("accountant: eps target must be > 0");
    const double tol = 1e-3;
    const double sigma_floor = 0.3;
    double lo = sigma_floor;
    double hi = 500.0;

    auto eps_at = [&](double sigma) { return accountant_epsilon(q, sigma, steps, delta); };

    double eps_lo = eps_at(lo);
    if (eps_lo <= eps_target) {
        // Even the smallest allowed sigma already meets the target; the
        // window may be unreachable but privacy is over- not under-delivered.
        return lo;
    }
    double eps_hi = eps_at(hi);
    int expansions = 0;
    while (eps_hi > eps_target) {
        if (++expansions > 24) {
            throw NumericError("accountant: calibration target " + std::to_string(eps_target) +
                               " unreachable within sigma bracket [" + std::to_string(lo) + ", " +
                               std::to_string(hi) + "], eps(hi) = " + std::to_string(eps_hi));
        }
        lo = hi;
        eps_lo = eps_hi;
        hi *= 2.0;
        eps_hi = eps_at(hi);
    }

    // eps is strictly decreasing in sigma: bisect until eps(hi) enters
    // [eps_target - tol, eps_target].
    for (int it = 0; it < 400 && eps_hi < eps_target - tol; ++it) {
        double mid = 0.5 * (lo + hi);
        double eps_mid = eps_at(mid);
        if (eps_mid > eps_target) {
            lo = mid;
        } else {
            hi = mid;
            eps_hi = eps_mid;
        }
    }
    if (eps_hi < eps_target - tol || eps_hi > eps_target) {
        throw NumericError("accountant: calibration failed to land in tolerance, bracket [" +
                           std::to_string(lo) + ", " + std::to_string(hi) + "], eps = " +
                           std::to_string(eps_hi));
    }
    return hi;
}

}  // namespace dprgmi
