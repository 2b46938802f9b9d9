#include "dprgmi/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dprgmi/parallel.hpp"
#include "dprgmi/stats.hpp"

namespace dprgmi {

namespace {

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw ConfigError("auroc: length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (double y : labels) {
        if (y != 0.0 && y != 1.0) throw ConfigError("auroc: labels must be 0 or 1");
        if (y == 1.0) ++n_pos;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw NumericError("auroc: undefined, only one class present");
    }

    std::vector<double> ranks = rank_with_ties(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == 1.0) rank_sum_pos += ranks[i];
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MacroAuroc macro_auroc_indexed(const ScoreMatrix& scores, const Matrix& labels,
                               std::span<const std::size_t> indices) {
    if (!scores.same_shape(labels)) throw ConfigError("macro_auroc: score/label shape mismatch");
    const std::size_t n_labels = scores.cols;
    MacroAuroc out;
    out.included.assign(n_labels, false);
    double sum = 0.0;
    std::size_t used = 0;
    std::vector<double> s(indices.size()), y(indices.size());
    for (std::size_t l = 0; l < n_labels; ++l) {
        std::size_t n_pos = 0;
        for (std::size_t k = 0; k < indices.size(); ++k) {
            s[k] = scores.at(indices[k], l);
            y[k] = labels.at(indices[k], l);
            if (y[k] == 1.0) ++n_pos;
        }
        if (n_pos == 0 || n_pos == indices.size()) continue;  // degenerate label
        sum += auroc(s, y);
        out.included[l] = true;
        ++used;
    }
    if (used == 0) throw NumericError("macro_auroc: every label degenerate");
    out.value = sum / static_cast<double>(used);
    return out;
}

MacroAuroc macro_auroc(const ScoreMatrix& scores, const Matrix& labels) {
    std::vector<std::size_t> identity(scores.rows);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    return macro_auroc_indexed(scores, labels, identity);
}

namespace {

struct ProbeObjective {
    const EmbeddingMatrix& z;
    std::span<const double> y;  // one label column, gathered
    double pos_weight;
    double lambda;

    double value(std::span<const double> w, double b) const {
        const std::size_t n = z.rows;
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            auto row = z.row(i);
            double s = b;
            for (std::size_t j = 0; j < z.cols; ++j) s += w[j] * row[j];
            loss += y[i] == 1.0 ? pos_weight * softplus(-s) : softplus(s);
        }
        loss /= static_cast<double>(n);
        double reg = 0.0;
        for (double v : w) reg += v * v;
        return loss + 0.5 * lambda * reg;
    }

    // Returns the objective value; fills grad (size d+1, bias last) and hess
    // ((d+1)^2 row-major). The Hessian of the weighted logistic loss is
    // sum_i c_i sigma'(s_i) x_i x_i^T with the bias as an all-ones feature.
    double newton_terms(std::span<const double> w, double b, std::span<double> grad,
                        std::span<double> hess) const {
        const std::size_t n = z.rows;
        const std::size_t d = z.cols;
        const std::size_t dim = d + 1;
        std::fill(grad.begin(), grad.end(), 0.0);
        std::fill(hess.begin(), hess.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            auto row = z.row(i);
            double s = b;
            for (std::size_t j = 0; j < d; ++j) s += w[j] * row[j];
            double ds, curve;
            if (y[i] == 1.0) {
                loss += pos_weight * softplus(-s);
                const double sig = sigmoid(-s);
                ds = -pos_weight * sig;
                curve = pos_weight * sig * (1.0 - sig);
            } else {
                loss += softplus(s);
                const double sig = sigmoid(s);
                ds = sig;
                curve = sig * (1.0 - sig);
            }
            for (std::size_t j = 0; j < d; ++j) grad[j] += ds * row[j];
            grad[d] += ds;
            for (std::size_t j = 0; j < d; ++j) {
                const double cj = curve * row[j];
                double* hrow = hess.data() + j * dim;
                for (std::size_t k = j; k < d; ++k) hrow[k] += cj * row[k];
                hrow[d] += cj;
            }
            hess[d * dim + d] += curve;
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        loss *= inv_n;
        for (std::size_t j = 0; j < dim; ++j) {
            grad[j] *= inv_n;
            for (std::size_t k = j; k < dim; ++k) hess[j * dim + k] *= inv_n;
        }
        double reg = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            grad[j] += lambda * w[j];
            hess[j * dim + j] += lambda;
            reg += w[j] * w[j];
        }
        for (std::size_t j = 1; j < dim; ++j) {
            for (std::size_t k = 0; k < j; ++k) hess[j * dim + k] = hess[k * dim + j];
        }
        return loss + 0.5 * lambda * reg;
    }
};

// In-place lower Cholesky factorization; false on a non-positive pivot.
bool cholesky(std::vector<double>& a, std::size_t dim) {
    for (std::size_t k = 0; k < dim; ++k) {
        double diag = a[k * dim + k];
        for (std::size_t m = 0; m < k; ++m) diag -= a[k * dim + m] * a[k * dim + m];
        if (!(diag > 0.0)) return false;
        const double root = std::sqrt(diag);
        a[k * dim + k] = root;
        for (std::size_t i = k + 1; i < dim; ++i) {
            double v = a[i * dim + k];
            for (std::size_t m = 0; m < k; ++m) v -= a[i * dim + m] * a[k * dim + m];
            a[i * dim + k] = v / root;
        }
    }
    return true;
}

// Solves L L^T x = rhs in place given the factor in the lower triangle.
void cholesky_solve(const std::vector<double>& l, std::size_t dim, std::vector<double>& x) {
    for (std::size_t i = 0; i < dim; ++i) {
        double v = x[i];
        for (std::size_t m = 0; m < i; ++m) v -= l[i * dim + m] * x[m];
        x[i] = v / l[i * dim + i];
    }
    for (std::size_t i = dim; i-- > 0;) {
        double v = x[i];
        for (std::size_t m = i + 1; m < dim; ++m) v -= l[m * dim + i] * x[m];
        x[i] = v / l[i * dim + i];
    }
}

}  // namespace

ProbeModel train_probe(const EmbeddingMatrix& z_train, const Matrix& y_train,
                       const LabelWeights& weights, const ProbeOptions& options) {
    if (z_train.rows != y_train.rows) throw ConfigError("train_probe: row count mismatch");
    if (z_train.rows == 0) throw ConfigError("train_probe: empty training data");
    if (options.lambda < 0.0) throw ConfigError("train_probe: lambda must be >= 0");
    require_binary(y_train, "train_probe");
    const std::size_t n = z_train.rows;
    const std::size_t d = z_train.cols;
    const std::size_t n_labels = y_train.cols;
    if (weights.w.size() != n_labels) throw ConfigError("train_probe: weight count mismatch");
    const bool warm = options.init_weights.rows > 0;
    if (warm && (options.init_weights.rows != n_labels || options.init_weights.cols != d ||
                 options.init_bias.size() != n_labels)) {
        throw ConfigError("train_probe: warm start shape mismatch");
    }

    ProbeModel probe;
    probe.weights = Matrix(n_labels, d);
    probe.bias.assign(n_labels, 0.0);
    probe.lambda = options.lambda;
    probe.fitted.assign(n_labels, false);
    probe.converged.assign(n_labels, false);
    probe.grad_norms.assign(n_labels, 0.0);

    // Descent runs on mean-centered embeddings with the mean folded back into
    // the bias afterwards. The reparametrization is exact (same objective,
    // same unique minimizer); it removes the ill-conditioned direction that
    // couples the unpenalized bias with an off-origin embedding cloud.
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = z_train.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (double& v : mean) v /= static_cast<double>(n);
    EmbeddingMatrix z_centered(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = z_train.row(i);
        for (std::size_t j = 0; j < d; ++j) z_centered.at(i, j) = row[j] - mean[j];
    }

    parallel_for(n_labels, [&](std::size_t l) {
        std::vector<double> y(n);
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = y_train.at(i, l);
            if (y[i] == 1.0) ++n_pos;
        }
        if (n_pos == 0 || n_pos == n) return;  // skipped, flag stays false

        ProbeObjective obj{z_centered, y, weights.w[l], options.lambda};
        std::vector<double> w(d, 0.0);
        double b = 0.0;
        if (warm) {
            auto init_row = options.init_weights.row(l);
            std::copy(init_row.begin(), init_row.end(), w.begin());
            b = options.init_bias[l];
            for (std::size_t j = 0; j < d; ++j) b += w[j] * mean[j];
        }

        const std::size_t dim = d + 1;
        std::vector<double> grad(dim), hess(dim * dim), dir(dim), chol;
        std::vector<double> trial_w(d);
        double f = obj.newton_terms(w, b, grad, hess);
        double grad_inf = 0.0;
        bool done = false;
        for (std::size_t it = 0; it < options.max_iters && !done; ++it) {
            grad_inf = 0.0;
            for (std::size_t j = 0; j < dim; ++j) grad_inf = std::max(grad_inf, std::abs(grad[j]));
            if (grad_inf <= options.tol) {
                probe.converged[l] = true;
                done = true;
                break;
            }
            // Newton direction; plain gradient if the factorization fails
            // (possible only for lambda = 0 on degenerate data).
            chol = hess;
            dir.assign(grad.begin(), grad.end());
            if (cholesky(chol, dim)) cholesky_solve(chol, dim, dir);
            double slope = 0.0;
            for (std::size_t j = 0; j < dim; ++j) slope += grad[j] * dir[j];
            if (!(slope > 0.0)) {
                dir.assign(grad.begin(), grad.end());
                slope = 0.0;
                for (std::size_t j = 0; j < dim; ++j) slope += grad[j] * grad[j];
            }
            // Backtracking line search, Armijo condition on the step -t dir.
            double step = 1.0;
            bool accepted = false;
            for (int half = 0; half < 60; ++half) {
                for (std::size_t j = 0; j < d; ++j) trial_w[j] = w[j] - step * dir[j];
                double trial_b = b - step * dir[d];
                double f_trial = obj.value(trial_w, trial_b);
                if (f_trial <= f - 1e-4 * step * slope) {
                    w.swap(trial_w);
                    b = trial_b;
                    f = obj.newton_terms(w, b, grad, hess);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) {
                // Objective is at its numerical floor; gradient norm is recorded.
                break;
            }
        }
        if (!done) {
            grad_inf = 0.0;
            for (std::size_t j = 0; j < dim; ++j) grad_inf = std::max(grad_inf, std::abs(grad[j]));
            probe.converged[l] = grad_inf <= options.tol;
        }
        probe.grad_norms[l] = grad_inf;
        probe.fitted[l] = true;
        auto out_row = probe.weights.row(l);
        std::copy(w.begin(), w.end(), out_row.begin());
        double b_out = b;
        for (std::size_t j = 0; j < d; ++j) b_out -= w[j] * mean[j];
        probe.bias[l] = b_out;
    });
    return probe;
}

ScoreMatrix probe_predict(const ProbeModel& probe, const EmbeddingMatrix& z) {
    if (z.cols != probe.weights.cols) {
        throw ConfigError("probe_predict: embedding dim " + std::to_string(z.cols) +
                          " does not match probe dim " + std::to_string(probe.weights.cols));
    }
    const std::size_t n_labels = probe.weights.rows;
    ScoreMatrix scores(z.rows, n_labels);
    for (std::size_t i = 0; i < z.rows; ++i) {
        auto row = z.row(i);
        for (std::size_t l = 0; l < n_labels; ++l) {
            auto w = probe.weights.row(l);
            double s = probe.bias[l];
            for (std::size_t j = 0; j < z.cols; ++j) s += w[j] * row[j];
            scores.at(i, l) = s;
        }
    }
    return scores;
}

double utilization_gap(double u_probe, double u_end2end) {
    if (!std::isfinite(u_probe) || !std::isfinite(u_end2end)) {
        throw ConfigError("utilization_gap: non-finite input");
    }
    bool probe_percentish = u_probe > 1.0;
    bool e2e_percentish = u_end2end > 1.0;
    if (probe_percentish != e2e_percentish) {
        throw ConfigError("utilization_gap: mixed units (one input looks like percent)");
    }
    return u_probe - u_end2end;
}

}  // namespace dprgmi
