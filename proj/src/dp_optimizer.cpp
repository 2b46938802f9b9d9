#include "dprgmi/dp_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "dprgmi/accountant.hpp"
#include "dprgmi/parallel.hpp"
#include "dprgmi/rng.hpp"

namespace dprgmi {

void PrivacySpec::validate() const {
    if (std::isnan(eps_target) || eps_target <= 0.0) {
        throw ConfigError("privacy: eps_target must be positive (inf for non-private)");
    }
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("privacy: delta must be in (0, 1)");
    if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) {
        throw ConfigError("privacy: clip_norm must be positive and finite");
    }
    if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
        throw ConfigError("privacy: sample_rate must be in (0, 1]");
    }
    if (is_private() && !(sigma > 0.0)) {
        throw ConfigError("privacy: sigma must be positive for a private run");
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning_rate must be nonnegative and finite");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("train: momentum must be in [0, 1)");
    }
    if (expected_batch < 0.0 || !std::isfinite(expected_batch)) {
        throw ConfigError("train: expected_batch must be nonnegative and finite");
    }
}

double clip_in_place(GradientVector& g, double clip_norm) {
    if (!(clip_norm > 0.0)) throw ConfigError("clip: clip_norm must be positive");
    const double norm = g.l2_norm();
    if (norm > clip_norm) g.scale(clip_norm / norm);
    return norm;
}

std::vector<std::size_t> poisson_sample(std::size_t n, double q, std::uint64_t seed,
                                        std::size_t step) {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("poisson_sample: q must be in (0, 1]");
    std::vector<std::size_t> batch;
    if (q == 1.0) {
        batch.resize(n);
        for (std::size_t i = 0; i < n; ++i) batch[i] = i;
        return batch;
    }
    SubstreamRng rng(seed, "poisson", step);
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() < q) batch.push_back(i);
    }
    return batch;
}

GradientVector draw_step_noise(const ModelConfig& cfg, std::uint64_t seed, std::size_t step) {
    GradientVector noise(cfg);
    SubstreamRng rng(seed, "noise", step);
    rng.gaussian_fill(noise.w1.data);
    rng.gaussian_fill(noise.b1);
    rng.gaussian_fill(noise.w2.data);
    rng.gaussian_fill(noise.b2);
    rng.gaussian_fill(noise.wh.data);
    rng.gaussian_fill(noise.bh);
    return noise;
}

namespace {

constexpr std::size_t kGradChunk = 32;
constexpr double kDivergenceNorm = 1e50;

// Sum of per-sample gradients over the batch, clipped when clip_norm > 0.
// Chunk boundaries depend only on the batch, and chunks are reduced in
// ascending order, so the result is identical for any thread count.
GradientVector batch_gradient_sum(const ParamVector& params, const Matrix& x, const Matrix& y,
                                  const LabelWeights& weights,
                                  std::span<const std::size_t> batch, double clip_norm,
                                  std::size_t step, const TrainHooks* hooks) {
    const ModelConfig cfg = params.config();
    GradientVector total(cfg);

    if (hooks != nullptr && hooks->on_clip) {
        ForwardCache cache(cfg);
        GradientVector grad(cfg);
        GradientVector raw(cfg);
        for (std::size_t i : batch) {
            per_sample_gradient(params, x.row(i), y.row(i), weights, cache, grad);
            raw = grad;
            if (clip_norm > 0.0) clip_in_place(grad, clip_norm);
            hooks->on_clip(step, i, raw, grad);
            total.add_scaled(grad, 1.0);
        }
        return total;
    }

    const std::size_t n_chunks = (batch.size() + kGradChunk - 1) / kGradChunk;
    std::vector<GradientVector> partial(n_chunks, GradientVector(cfg));
    parallel_for(n_chunks, [&](std::size_t c) {
        ForwardCache cache(cfg);
        GradientVector grad(cfg);
        const std::size_t lo = c * kGradChunk;
        const std::size_t hi = std::min(lo + kGradChunk, batch.size());
        for (std::size_t k = lo; k < hi; ++k) {
            const std::size_t i = batch[k];
            per_sample_gradient(params, x.row(i), y.row(i), weights, cache, grad);
            if (clip_norm > 0.0) clip_in_place(grad, clip_norm);
            partial[c].add_scaled(grad, 1.0);
        }
    });
    for (std::size_t c = 0; c < n_chunks; ++c) total.add_scaled(partial[c], 1.0);
    return total;
}

void check_divergence(const ParamVector& params, std::size_t step) {
    bool finite = all_finite(params.w1) && all_finite(params.w2) && all_finite(params.wh);
    auto vec_finite = [](const std::vector<double>& v) {
        for (double x : v) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    };
    finite = finite && vec_finite(params.b1) && vec_finite(params.b2) && vec_finite(params.bh);
    if (!finite || params.l2_norm() > kDivergenceNorm) {
        throw NumericError("training diverged at step " + std::to_string(step));
    }
}

void validate_training_inputs(const ParamVector& init, const Matrix& x, const Matrix& y,
                              const LabelWeights& weights) {
    const ModelConfig cfg = init.config();
    if (x.rows == 0) throw ConfigError("train: empty training set");
    if (x.cols != cfg.input_dim) throw ConfigError("train: feature dim mismatch");
    if (y.rows != x.rows) throw ConfigError("train: feature/label row mismatch");
    if (y.cols != cfg.n_labels) throw ConfigError("train: label dim mismatch");
    if (weights.w.size() != cfg.n_labels) throw ConfigError("train: weight count mismatch");
    require_binary(y, "train");
    if (!all_finite(x)) throw NumericError("train: non-finite feature value");
}

}  // namespace

void dp_step(DpSgdState& state, const Matrix& x, const Matrix& y,
             std::span<const std::size_t> batch, const PrivacySpec& spec, const TrainConfig& cfg,
             std::size_t step, const TrainHooks* hooks) {
    if (!(spec.sigma > 0.0)) throw ConfigError("dp_step: noise multiplier not resolved");
    const double expected_batch = cfg.expected_batch > 0.0
                                      ? cfg.expected_batch
                                      : spec.sample_rate * static_cast<double>(x.rows);

    GradientVector update =
        batch_gradient_sum(state.params, x, y, cfg.weights, batch, spec.clip_norm, step, hooks);

    GradientVector noise = draw_step_noise(state.params.config(), cfg.seed, step);
    update.add_scaled(noise, spec.sigma * spec.clip_norm);
    update.scale(1.0 / expected_batch);

    state.velocity.scale(cfg.momentum);
    state.velocity.add_scaled(update, 1.0);
    state.params.add_scaled(state.velocity, -cfg.learning_rate);
}

TrainResult train_private(const ParamVector& init, const Matrix& x, const Matrix& y,
                          const PrivacySpec& spec, const TrainConfig& cfg,
                          const TrainHooks* hooks) {
    spec.validate();
    cfg.validate();
    validate_training_inputs(init, x, y, cfg.weights);
    if (!(spec.sigma > 0.0)) throw ConfigError("train_private: sigma must be positive");
    const std::size_t n = x.rows;
    if (spec.sample_rate * static_cast<double>(n) < 1.0) {
        throw ConfigError("train_private: expected batch q*n below 1");
    }
    if (spec.delta >= 1.0 / static_cast<double>(n)) {
        std::fprintf(stderr, "warning: delta %.3g is not below 1/n_train = %.3g\n", spec.delta,
                     1.0 / static_cast<double>(n));
    }

    TrainResult result{init, 0.0, spec.delta};
    if (spec.steps == 0) return result;

    DpSgdState state(init);
    for (std::size_t t = 0; t < spec.steps; ++t) {
        std::vector<std::size_t> batch = poisson_sample(n, spec.sample_rate, cfg.seed, t);
        dp_step(state, x, y, batch, spec, cfg, t, hooks);
        check_divergence(state.params, t);
    }
    result.params = std::move(state.params);
    result.epsilon_spent =
        accountant_epsilon(spec.sample_rate, spec.sigma, spec.steps, spec.delta);
    return result;
}

ParamVector train_nonprivate(const ParamVector& init, const Matrix& x, const Matrix& y,
                             std::size_t steps, std::size_t batch_size, const TrainConfig& cfg) {
    cfg.validate();
    validate_training_inputs(init, x, y, cfg.weights);
    const std::size_t n = x.rows;
    if (batch_size == 0 || batch_size > n) {
        throw ConfigError("train_nonprivate: batch_size must be in [1, n]");
    }

    DpSgdState state(init);
    std::vector<std::size_t> perm(n);
    std::size_t epoch = 0;
    std::size_t cursor = n;  // force a shuffle on first use
    const std::size_t usable = (n / batch_size) * batch_size;

    for (std::size_t t = 0; t < steps; ++t) {
        if (cursor + batch_size > usable) {
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            SubstreamRng rng(cfg.seed, "poisson", epoch++);
            for (std::size_t i = n - 1; i > 0; --i) {
                std::size_t j = rng.bounded_u64(i + 1);
                std::swap(perm[i], perm[j]);
            }
            cursor = 0;
        }
        std::span<const std::size_t> batch(perm.data() + cursor, batch_size);
        cursor += batch_size;

        GradientVector update =
            batch_gradient_sum(state.params, x, y, cfg.weights, batch, 0.0, t, nullptr);
        update.scale(1.0 / static_cast<double>(batch_size));
        state.velocity.scale(cfg.momentum);
        state.velocity.add_scaled(update, 1.0);
        state.params.add_scaled(state.velocity, -cfg.learning_rate);
        check_divergence(state.params, t);
    }
    return state.params;
}

}  // namespace dprgmi
