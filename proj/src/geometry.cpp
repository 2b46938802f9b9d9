#include "dprgmi/geometry.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace dprgmi {

double displacement(const EmbeddingMatrix& z_eps, const EmbeddingMatrix& z_ref) {
    if (!z_eps.same_shape(z_ref)) {
        throw ConfigError("displacement: embeddings are not paired (shapes " +
                          std::to_string(z_eps.rows) + "x" + std::to_string(z_eps.cols) + " vs " +
                          std::to_string(z_ref.rows) + "x" + std::to_string(z_ref.cols) + ")");
    }
    if (z_eps.rows == 0) throw ConfigError("displacement: empty embeddings");
    double sum = 0.0;
    for (std::size_t i = 0; i < z_eps.rows; ++i) {
        auto a = z_eps.row(i);
        auto b = z_ref.row(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < z_eps.cols; ++j) {
            double diff = a[j] - b[j];
            sq += diff * diff;
        }
        sum += sq;
    }
    return sum / static_cast<double>(z_eps.rows);
}

double displacement_indexed(const EmbeddingMatrix& z_eps, const EmbeddingMatrix& z_ref,
                            std::span<const std::size_t> indices) {
    if (!z_eps.same_shape(z_ref)) {
        throw ConfigError("displacement: embeddings are not paired (shapes " +
                          std::to_string(z_eps.rows) + "x" + std::to_string(z_eps.cols) + " vs " +
                          std::to_string(z_ref.rows) + "x" + std::to_string(z_ref.cols) + ")");
    }
    if (indices.empty()) throw ConfigError("displacement: empty index set");
    double sum = 0.0;
    for (std::size_t i : indices) {
        auto a = z_eps.row(i);
        auto b = z_ref.row(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < z_eps.cols; ++j) {
            double diff = a[j] - b[j];
            sq += diff * diff;
        }
        sum += sq;
    }
    return sum / static_cast<double>(indices.size());
}

CovarianceSummary covariance_summary_indexed(const EmbeddingMatrix& z,
                                             std::span<const std::size_t> indices) {
    const std::size_t n = indices.size();
    const std::size_t d = z.cols;
    if (n < 2) throw NumericError("covariance: need at least 2 rows, got " + std::to_string(n));

    std::vector<double> mean(d, 0.0);
    for (std::size_t i : indices) {
        auto r = z.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);

    // Upper triangle of S = (1/N) (Z - mu)^T (Z - mu).
    std::vector<double> upper(d * (d + 1) / 2, 0.0);
    std::vector<double> centered(d);
    for (std::size_t i : indices) {
        auto r = z.row(i);
        for (std::size_t j = 0; j < d; ++j) centered[j] = r[j] - mean[j];
        std::size_t k = 0;
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = a; b < d; ++b) {
                upper[k++] += centered[a] * centered[b];
            }
        }
    }

    CovarianceSummary out;
    const double inv_n = 1.0 / static_cast<double>(n);
    std::size_t k = 0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            double s = upper[k++] * inv_n;
            if (a == b) {
                out.trace += s;
                out.frob_sq += s * s;
            } else {
                out.frob_sq += 2.0 * s * s;
            }
        }
    }
    out.d_eff = out.trace > 0.0 ? (out.trace * out.trace) / out.frob_sq
                                : std::numeric_limits<double>::quiet_NaN();
    return out;
}

CovarianceSummary covariance_summary(const EmbeddingMatrix& z) {
    std::vector<std::size_t> identity(z.rows);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    return covariance_summary_indexed(z, identity);
}

double effective_dimension_indexed(const EmbeddingMatrix& z,
                                   std::span<const std::size_t> indices) {
    CovarianceSummary s = covariance_summary_indexed(z, indices);
    if (!(s.trace > 0.0) || !(s.frob_sq > 0.0)) {
        throw NumericError("effective_dimension: degenerate geometry (zero covariance)");
    }
    return (s.trace * s.trace) / s.frob_sq;
}

double effective_dimension(const EmbeddingMatrix& z) {
    std::vector<std::size_t> identity(z.rows);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    return effective_dimension_indexed(z, identity);
}

}  // namespace dprgmi
