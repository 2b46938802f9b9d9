#include <cmath>
#include <vector>

#include "doctest.h"
#include "dprgmi/evaluation.hpp"
#include "dprgmi/model.hpp"
#include "dprgmi/synthdata.hpp"

using namespace dprgmi;

namespace {

SynthConfig base_config() {
    SynthConfig cfg;
    cfg.n_samples = 1000;
    cfg.input_dim = 8;
    cfg.n_labels = 2;
    cfg.class_sep = 2.0;
    cfg.noise_std = 1.0;
    cfg.prevalences = {0.4, 0.3};
    cfg.seed = 17;
    return cfg;
}

}  // namespace

TEST_CASE("split sizes follow the 80/20 rule") {
    SplitDataset d = generate(base_config());
    CHECK(d.train.x.rows == 800);
    CHECK(d.test.x.rows == 200);
    CHECK(d.train.x.cols == 8);
    CHECK(d.train.y.cols == 2);
    CHECK(d.train.split == SplitTag::train);
    CHECK(d.test.split == SplitTag::test);
}

TEST_CASE("same config, same bytes") {
    SynthConfig cfg = base_config();
    SplitDataset a = generate(cfg);
    SplitDataset b = generate(cfg);
    CHECK(a.train.x.data == b.train.x.data);
    CHECK(a.train.y.data == b.train.y.data);
    CHECK(a.test.x.data == b.test.x.data);
    CHECK(a.test.y.data == b.test.y.data);
}

TEST_CASE("different seeds give different data") {
    SynthConfig cfg = base_config();
    SplitDataset a = generate(cfg);
    cfg.seed = 18;
    SplitDataset b = generate(cfg);
    CHECK(a.train.x.data != b.train.x.data);
}

TEST_CASE("empirical prevalence tracks the configured one") {
    SynthConfig cfg = base_config();
    cfg.n_samples = 10000;
    cfg.prevalences = {0.3, 0.5};
    SplitDataset d = generate(cfg);
    const double n = static_cast<double>(cfg.n_samples);
    for (std::size_t l = 0; l < 2; ++l) {
        double pos = 0.0;
        for (std::size_t i = 0; i < d.train.y.rows; ++i) pos += d.train.y.at(i, l);
        for (std::size_t i = 0; i < d.test.y.rows; ++i) pos += d.test.y.at(i, l);
        double p = cfg.prevalences[l];
        double bound = 4.0 * std::sqrt(p * (1.0 - p) / n);
        CHECK(std::abs(pos / n - p) <= bound);
    }
}

TEST_CASE("labels are binary") {
    SplitDataset d = generate(base_config());
    require_binary(d.train.y, "train");
    require_binary(d.test.y, "test");
}

TEST_CASE("positive labels shift along orthonormal directions") {
    // With almost no noise, each sample sits at sum of its positive
    // directions; squared norms are then the positive-label counts.
    SynthConfig cfg = base_config();
    cfg.n_samples = 400;
    cfg.noise_std = 1e-9;
    cfg.class_sep = 1.0;
    SplitDataset d = generate(cfg);
    for (const Dataset* part : {&d.train, &d.test}) {
        for (std::size_t i = 0; i < part->x.rows; ++i) {
            double norm_sq = 0.0;
            for (double v : part->x.row(i)) norm_sq += v * v;
            double positives = part->y.at(i, 0) + part->y.at(i, 1);
            CHECK(norm_sq == doctest::Approx(positives).epsilon(1e-6));
        }
    }
}

TEST_CASE("zero separation carries no label signal") {
    SynthConfig cfg = base_config();
    cfg.n_samples = 5000;
    cfg.input_dim = 8;
    cfg.n_labels = 1;
    cfg.class_sep = 0.0;
    cfg.prevalences = {0.4};
    SplitDataset d = generate(cfg);

    ProbeOptions options;
    options.lambda = 1e-2;
    ProbeModel probe = train_probe(d.train.x, d.train.y, pos_weights(d.train.y), options);
    ScoreMatrix scores = probe_predict(probe, d.test.x);
    double test_auroc = macro_auroc(scores, d.test.y).value;
    CHECK(std::abs(test_auroc - 0.5) < 0.06);
}

TEST_CASE("strong separation is learnable") {
    SynthConfig cfg = base_config();
    cfg.n_samples = 2000;
    cfg.class_sep = 3.0;
    SplitDataset d = generate(cfg);

    ProbeOptions options;
    options.lambda = 1e-2;
    ProbeModel probe = train_probe(d.train.x, d.train.y, pos_weights(d.train.y), options);
    ScoreMatrix scores = probe_predict(probe, d.test.x);
    CHECK(macro_auroc(scores, d.test.y).value > 0.95);
}

TEST_CASE("config validation rejects bad inputs") {
    SynthConfig cfg = base_config();
    cfg.n_samples = 1;
    CHECK_THROWS_AS(generate(cfg), ConfigError);

    cfg = base_config();
    cfg.input_dim = 1;  // fewer dims than labels: no orthonormal directions
    CHECK_THROWS_AS(generate(cfg), ConfigError);

    cfg = base_config();
    cfg.prevalences = {0.4, 0.0};
    CHECK_THROWS_WITH_AS(generate(cfg), doctest::Contains("1"), ConfigError);

    cfg = base_config();
    cfg.prevalences = {0.4};
    CHECK_THROWS_AS(generate(cfg), ConfigError);

    cfg = base_config();
    cfg.noise_std = 0.0;
    CHECK_THROWS_AS(generate(cfg), ConfigError);

    cfg = base_config();
    cfg.class_sep = -1.0;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
}
