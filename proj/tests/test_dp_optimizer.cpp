#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "dprgmi/accountant.hpp"
#include "dprgmi/dp_optimizer.hpp"
#include "dprgmi/evaluation.hpp"
#include "dprgmi/parallel.hpp"
#include "dprgmi/rng.hpp"
#include "dprgmi/synthdata.hpp"

using namespace dprgmi;

namespace {

SplitDataset tiny_data(std::uint64_t seed = 21, std::size_t n = 500) {
    SynthConfig cfg;
    cfg.n_samples = n;
    cfg.input_dim = 6;
    cfg.n_labels = 2;
    cfg.class_sep = 2.5;
    cfg.noise_std = 1.0;
    cfg.prevalences = {0.4, 0.3};
    cfg.seed = seed;
    return generate(cfg);
}

TrainConfig config_for(const Matrix& y, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.weights = pos_weights(y);
    return cfg;
}

GradientVector filled_gradient(const ModelConfig& cfg, double scale) {
    GradientVector g(cfg);
    SubstreamRng rng(5, "synth", 77);
    std::vector<double> flat(g.total_size());
    for (double& v : flat) v = rng.gaussian();
    double norm = 0.0;
    for (double v : flat) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : flat) v *= scale / norm;
    g.unflatten(flat);
    return g;
}

}  // namespace

TEST_CASE("clipping leaves small gradients bitwise untouched") {
    ModelConfig mcfg{4, 5, 3, 2};
    SUBCASE("zero gradient") {
        GradientVector g(mcfg);
        g.set_zero();
        CHECK(clip_in_place(g, 1.0) == 0.0);
        for (double v : g.flatten()) CHECK(v == 0.0);
    }
    SUBCASE("inside the ball") {
        GradientVector g = filled_gradient(mcfg, 0.5);
        std::vector<double> before = g.flatten();
        double norm = clip_in_place(g, 1.0);
        CHECK(norm == doctest::Approx(0.5).epsilon(1e-12));
        std::vector<double> after = g.flatten();
        CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0);
    }
    SUBCASE("outside the ball") {
        GradientVector g = filled_gradient(mcfg, 2.0);
        double pre = clip_in_place(g, 1.0);
        CHECK(pre == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(g.l2_norm() == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(g.l2_norm() <= 1.0 * (1.0 + 1e-12));
    }
}

TEST_CASE("poisson sampling has the right mean batch size") {
    const std::size_t n = 10000;
    const double q = 0.01;
    double total = 0.0;
    for (std::size_t step = 0; step < 1000; ++step) {
        std::vector<std::size_t> batch = poisson_sample(n, q, 4, step);
        total += static_cast<double>(batch.size());
        for (std::size_t i = 1; i < batch.size(); ++i) REQUIRE(batch[i - 1] < batch[i]);
    }
    double mean = total / 1000.0;
    CHECK(mean >= 90.0);
    CHECK(mean <= 110.0);
}

TEST_CASE("poisson sampling is deterministic per (seed, step)") {
    CHECK(poisson_sample(100, 0.3, 9, 5) == poisson_sample(100, 0.3, 9, 5));
    CHECK(poisson_sample(100, 0.3, 9, 5) != poisson_sample(100, 0.3, 9, 6));
}

TEST_CASE("q = 1 selects every index") {
    std::vector<std::size_t> batch = poisson_sample(7, 1.0, 0, 0);
    REQUIRE(batch.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) CHECK(batch[i] == i);
}

TEST_CASE("step noise depends only on (seed, step)") {
    ModelConfig mcfg{4, 5, 3, 2};
    GradientVector a = draw_step_noise(mcfg, 3, 17);
    GradientVector b = draw_step_noise(mcfg, 3, 17);
    GradientVector c = draw_step_noise(mcfg, 3, 18);
    CHECK(a.flatten() == b.flatten());
    CHECK(a.flatten() != c.flatten());
}

TEST_CASE("noise draws are standard normal within 3 percent") {
    ModelConfig mcfg{32, 64, 16, 3};  // 3203 entries per draw
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (std::size_t step = 0; step < 4; ++step) {
        GradientVector noise = draw_step_noise(mcfg, 8, step);
        for (double v : noise.flatten()) {
            sum += v;
            sum_sq += v * v;
            ++count;
        }
    }
    REQUIRE(count >= 10000);
    double mean = sum / static_cast<double>(count);
    double sd = std::sqrt(sum_sq / static_cast<double>(count) - mean * mean);
    CHECK(std::abs(sd - 1.0) <= 0.03);
}

TEST_CASE("dp_step applies the documented update rule") {
    SplitDataset data = tiny_data();
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 2);

    PrivacySpec spec;
    spec.eps_target = 2.0;
    spec.clip_norm = 0.7;
    spec.sample_rate = 0.1;
    spec.steps = 1;
    spec.sigma = 1.3;

    TrainConfig cfg = config_for(data.train.y, 6);
    cfg.expected_batch = spec.sample_rate * static_cast<double>(data.train.x.rows);

    std::vector<std::size_t> batch = poisson_sample(data.train.x.rows, spec.sample_rate,
                                                    cfg.seed, 0);
    REQUIRE(!batch.empty());

    DpSgdState state(init);
    dp_step(state, data.train.x, data.train.y, batch, spec, cfg, 0);

    // Recompute by hand: clip each per-sample gradient, add sigma*C*xi, divide
    // by the expected batch, momentum step from zero velocity.
    GradientVector sum(mcfg);
    sum.set_zero();
    ForwardCache cache(mcfg);
    GradientVector grad(mcfg);
    for (std::size_t idx : batch) {
        per_sample_gradient(init, data.train.x.row(idx), data.train.y.row(idx), cfg.weights,
                            cache, grad);
        clip_in_place(grad, spec.clip_norm);
        sum.add_scaled(grad, 1.0);
    }
    GradientVector noise = draw_step_noise(mcfg, cfg.seed, 0);
    sum.add_scaled(noise, spec.sigma * spec.clip_norm);
    sum.scale(1.0 / cfg.expected_batch);

    ParamVector expected = init;
    expected.add_scaled(sum, -cfg.learning_rate);

    std::vector<double> got = state.params.flatten(), want = expected.flatten();
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("an empty batch still takes a noise step") {
    SplitDataset data = tiny_data();
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 3);

    PrivacySpec spec;
    spec.eps_target = 1.0;
    spec.clip_norm = 1.0;
    spec.sample_rate = 0.05;
    spec.steps = 1;
    spec.sigma = 2.0;
    TrainConfig cfg = config_for(data.train.y, 4);
    cfg.expected_batch = 25.0;

    DpSgdState state(init);
    dp_step(state, data.train.x, data.train.y, {}, spec, cfg, 7);

    GradientVector noise = draw_step_noise(mcfg, cfg.seed, 7);
    noise.scale(spec.sigma * spec.clip_norm / cfg.expected_batch);
    ParamVector expected = init;
    expected.add_scaled(noise, -cfg.learning_rate);

    std::vector<double> got = state.params.flatten(), want = expected.flatten();
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
}

TEST_CASE("vanishing noise with full sampling reduces to plain SGD") {
    SplitDataset data = tiny_data(5, 60);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 4);
    const std::size_t n = data.train.x.rows;

    PrivacySpec spec;
    spec.eps_target = 100.0;
    spec.clip_norm = 1e9;
    spec.sample_rate = 1.0;
    spec.steps = 1;
    spec.sigma = 1e-300;
    TrainConfig cfg = config_for(data.train.y, 8);
    cfg.expected_batch = static_cast<double>(n);

    std::vector<std::size_t> batch = poisson_sample(n, 1.0, cfg.seed, 0);
    DpSgdState state(init);
    dp_step(state, data.train.x, data.train.y, batch, spec, cfg, 0);

    GradientVector sum(mcfg);
    sum.set_zero();
    ForwardCache cache(mcfg);
    GradientVector grad(mcfg);
    for (std::size_t i = 0; i < n; ++i) {
        per_sample_gradient(init, data.train.x.row(i), data.train.y.row(i), cfg.weights, cache,
                            grad);
        sum.add_scaled(grad, 1.0);
    }
    sum.scale(1.0 / static_cast<double>(n));
    ParamVector expected = init;
    expected.add_scaled(sum, -cfg.learning_rate);

    std::vector<double> got = state.params.flatten(), want = expected.flatten();
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        diff += (got[i] - want[i]) * (got[i] - want[i]);
        norm += want[i] * want[i];
    }
    CHECK(std::sqrt(diff) <= 1e-10 * std::max(1.0, std::sqrt(norm)));
}

TEST_CASE("private training is independent of the worker count") {
    SplitDataset data = tiny_data(6, 300);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 11);

    PrivacySpec spec;
    spec.eps_target = 8.0;
    spec.clip_norm = 1.0;
    spec.sample_rate = 0.2;
    spec.steps = 25;
    spec.sigma = 1.1;
    TrainConfig cfg = config_for(data.train.y, 12);

    set_worker_threads(1);
    TrainResult serial = train_private(init, data.train.x, data.train.y, spec, cfg);
    set_worker_threads(7);
    TrainResult parallel = train_private(init, data.train.x, data.train.y, spec, cfg);
    set_worker_threads(1);

    CHECK(serial.params.flatten() == parallel.params.flatten());
    CHECK(serial.epsilon_spent == parallel.epsilon_spent);
}

TEST_CASE("the observer hook sees every sample in order with valid clipping") {
    SplitDataset data = tiny_data(7, 200);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 1);

    PrivacySpec spec;
    spec.eps_target = 4.0;
    spec.clip_norm = 0.5;
    spec.sample_rate = 0.15;
    spec.steps = 10;
    spec.sigma = 1.4;
    TrainConfig cfg = config_for(data.train.y, 2);

    std::size_t observed = 0;
    bool ordered = true, norms_ok = true, inside_untouched = true;
    std::size_t last_step = 0, last_sample = 0;
    bool first = true;
    TrainHooks hooks;
    hooks.on_clip = [&](std::size_t step, std::size_t sample, const GradientVector& raw,
                        const GradientVector& clipped) {
        if (!first && step == last_step && sample <= last_sample) ordered = false;
        first = false;
        last_step = step;
        last_sample = sample;
        ++observed;
        double clipped_norm = clipped.l2_norm();
        if (clipped_norm > spec.clip_norm * (1.0 + 1e-12)) norms_ok = false;
        if (raw.l2_norm() <= spec.clip_norm && raw.flatten() != clipped.flatten()) {
            inside_untouched = false;
        }
    };
    train_private(init, data.train.x, data.train.y, spec, cfg, &hooks);
    CHECK(observed > 0);
    CHECK(ordered);
    CHECK(norms_ok);
    CHECK(inside_untouched);
}

TEST_CASE("zero steps return the initialization with zero spend") {
    SplitDataset data = tiny_data(8, 100);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 13);
    PrivacySpec spec;
    spec.eps_target = 2.0;
    spec.clip_norm = 1.0;
    spec.sample_rate = 0.3;
    spec.steps = 0;
    spec.sigma = 1.0;
    TrainConfig cfg = config_for(data.train.y, 14);
    TrainResult result = train_private(init, data.train.x, data.train.y, spec, cfg);
    CHECK(result.params.flatten() == init.flatten());
    CHECK(result.epsilon_spent == 0.0);
}

TEST_CASE("consumed epsilon respects the target") {
    SplitDataset data = tiny_data(9, 400);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 15);
    PrivacySpec spec;
    spec.eps_target = 2.0;
    spec.delta = 1e-4;
    spec.clip_norm = 1.0;
    spec.sample_rate = 0.08;
    spec.steps = 50;
    spec.sigma = calibrate_sigma(2.0, 1e-4, 0.08, 50);
    TrainConfig cfg = config_for(data.train.y, 16);
    TrainResult result = train_private(init, data.train.x, data.train.y, spec, cfg);
    CHECK(result.epsilon_spent <= 2.0 + 1e-3);
    CHECK(result.epsilon_spent > 0.0);
    CHECK(result.delta == 1e-4);
}

TEST_CASE("divergence is reported with the failing step") {
    SplitDataset data = tiny_data(10, 100);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 17);
    PrivacySpec spec;
    spec.eps_target = 8.0;
    spec.clip_norm = 1.0;
    spec.sample_rate = 0.5;
    spec.steps = 30;
    spec.sigma = 1.0;
    TrainConfig cfg = config_for(data.train.y, 18);
    cfg.learning_rate = 1e155;
    CHECK_THROWS_WITH_AS(train_private(init, data.train.x, data.train.y, spec, cfg),
                         doctest::Contains("step"), NumericError);
}

TEST_CASE("sampling below one expected sample is rejected") {
    SplitDataset data = tiny_data(11, 100);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 19);
    PrivacySpec spec;
    spec.eps_target = 2.0;
    spec.clip_norm = 1.0;
    spec.sample_rate = 1e-6;
    spec.steps = 5;
    spec.sigma = 1.0;
    TrainConfig cfg = config_for(data.train.y, 20);
    CHECK_THROWS_AS(train_private(init, data.train.x, data.train.y, spec, cfg), ConfigError);
}

TEST_CASE("zero learning rate leaves the baseline untouched") {
    SplitDataset data = tiny_data(12, 100);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 21);
    TrainConfig cfg = config_for(data.train.y, 22);
    cfg.learning_rate = 0.0;
    ParamVector out = train_nonprivate(init, data.train.x, data.train.y, 20, 16, cfg);
    CHECK(out.flatten() == init.flatten());
}

TEST_CASE("the baseline learns separable data") {
    SplitDataset data = tiny_data(13, 1200);
    ModelConfig mcfg{6, 16, 8, 2};
    ParamVector init = init_params(mcfg, 23);
    TrainConfig cfg = config_for(data.train.y, 24);
    cfg.expected_batch = 64.0;
    ParamVector out = train_nonprivate(init, data.train.x, data.train.y, 400, 64, cfg);
    ScoreMatrix scores = predict_logits(out, data.train.x);
    CHECK(macro_auroc(scores, data.train.y).value >= 0.95);
}

TEST_CASE("the baseline is deterministic in the seed") {
    SplitDataset data = tiny_data(14, 200);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 25);
    TrainConfig cfg = config_for(data.train.y, 26);
    ParamVector a = train_nonprivate(init, data.train.x, data.train.y, 30, 16, cfg);
    ParamVector b = train_nonprivate(init, data.train.x, data.train.y, 30, 16, cfg);
    CHECK(a.flatten() == b.flatten());
    cfg.seed = 27;
    ParamVector c = train_nonprivate(init, data.train.x, data.train.y, 30, 16, cfg);
    CHECK(a.flatten() != c.flatten());
}

TEST_CASE("batch sizes outside [1, n] are rejected") {
    SplitDataset data = tiny_data(15, 100);
    ModelConfig mcfg{6, 8, 4, 2};
    ParamVector init = init_params(mcfg, 28);
    TrainConfig cfg = config_for(data.train.y, 29);
    CHECK_THROWS_AS(train_nonprivate(init, data.train.x, data.train.y, 5, 0, cfg), ConfigError);
    CHECK_THROWS_AS(
        train_nonprivate(init, data.train.x, data.train.y, 5, data.train.x.rows + 1, cfg),
        ConfigError);
}
