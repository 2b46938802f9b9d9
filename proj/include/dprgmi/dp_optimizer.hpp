#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "dprgmi/model.hpp"

namespace dprgmi {

// eps_target is +infinity for the non-private branch; sigma is the resolved
// noise multiplier (calibrated or given explicitly).
struct PrivacySpec {
    double eps_target = std::numeric_limits<double>::infinity();
    double delta = 1e-5;
    double clip_norm = 1.0;
    double sample_rate = 0.0;
    std::size_t steps = 0;
    double sigma = 0.0;

    bool is_private() const { return std::isfinite(eps_target); }
    void validate() const;
};

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double expected_batch = 0.0;  // q * n_train; derived from the data when 0
    std::uint64_t seed = 0;
    LabelWeights weights;

    void validate() const;
};

// Optional per-sample observation point. Setting on_clip forces the batch
// loop onto the serial path so callers see samples in ascending order.
struct TrainHooks {
    std::function<void(std::size_t step, std::size_t sample_index, const GradientVector& raw,
                       const GradientVector& clipped)>
        on_clip;
};

struct DpSgdState {
    ParamVector params;
    GradientVector velocity;

    explicit DpSgdState(const ParamVector& init)
        : params(init), velocity(init.config()) {}
};

struct TrainResult {
    ParamVector params;
    double epsilon_spent = 0.0;
    double delta = 0.0;
};

// Scales g to norm clip_norm when it exceeds it; otherwise leaves the bits
// untouched. Returns the pre-clip norm.
double clip_in_place(GradientVector& g, double clip_norm);

// Independent inclusion of each index with probability q; ascending order.
std::vector<std::size_t> poisson_sample(std::size_t n, double q, std::uint64_t seed,
                                        std::size_t step);

// Standard normal draws for one step's noise, in flattening order. The same
// (seed, step) pair always yields the same vector, whatever the batch was.
GradientVector draw_step_noise(const ModelConfig& cfg, std::uint64_t seed, std::size_t step);

// One DP-SGD step over an already-sampled batch: per-sample clip, Gaussian
// noise scaled by sigma * clip_norm, momentum update with the mean taken over
// the expected batch size. An empty batch still applies the noise.
void dp_step(DpSgdState& state, const Matrix& x, const Matrix& y,
             std::span<const std::size_t> batch, const PrivacySpec& spec, const TrainConfig& cfg,
             std::size_t step, const TrainHooks* hooks = nullptr);

TrainResult train_private(const ParamVector& init, const Matrix& x, const Matrix& y,
                          const PrivacySpec& spec, const TrainConfig& cfg,
                          const TrainHooks* hooks = nullptr);

// Baseline without clipping or noise: shuffled epochs, fixed batch size,
// remainder dropped, same momentum rule.
ParamVector train_nonprivate(const ParamVector& init, const Matrix& x, const Matrix& y,
                             std::size_t steps, std::size_t batch_size, const TrainConfig& cfg);

}  // namespace dprgmi
