#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dprgmi/evaluation.hpp"
#include "dprgmi/model.hpp"
#include "dprgmi/rng.hpp"

using namespace dprgmi;

namespace {

double brute_force_auroc(std::span<const double> scores, std::span<const double> labels) {
    double pairs = 0.0, wins = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1.0) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0.0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / pairs;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("the worked AUROC example gives 0.75") {
    std::vector<double> scores = {0.1, 0.4, 0.35, 0.8};
    std::vector<double> labels = {0.0, 0.0, 1.0, 1.0};
    CHECK(auroc(scores, labels) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("constant scores give exactly one half") {
    std::vector<double> scores = {2.0, 2.0, 2.0, 2.0, 2.0};
    std::vector<double> labels = {0.0, 1.0, 0.0, 1.0, 1.0};
    CHECK(auroc(scores, labels) == 0.5);
}

TEST_CASE("single-class inputs are undefined") {
    std::vector<double> scores = {0.1, 0.2};
    std::vector<double> ones = {1.0, 1.0};
    std::vector<double> zeros = {0.0, 0.0};
    CHECK_THROWS_AS(auroc(scores, ones), NumericError);
    CHECK_THROWS_AS(auroc(scores, zeros), NumericError);
}

TEST_CASE("rank-sum AUROC agrees with brute force on 500 tied instances") {
    SubstreamRng rng(3, "synth", 42);
    for (int rep = 0; rep < 500; ++rep) {
        std::size_t n = 2 + rng.bounded_u64(49);
        std::vector<double> scores(n), labels(n);
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // Small discrete support makes ties common.
            scores[i] = static_cast<double>(rng.bounded_u64(6)) / 4.0;
            labels[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
            has_pos |= labels[i] == 1.0;
            has_neg |= labels[i] == 0.0;
        }
        if (!has_pos) labels[0] = 1.0;
        if (!has_neg) labels[n - 1] = 0.0;
        CAPTURE(rep);
        CHECK(std::abs(auroc(scores, labels) - brute_force_auroc(scores, labels)) <= 1e-12);
    }
}

TEST_CASE("AUROC is invariant under strictly monotone transforms") {
    SubstreamRng rng(4, "synth", 43);
    std::vector<double> scores(60), labels(60), transformed(60);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = static_cast<double>(rng.bounded_u64(10)) - 5.0;
        labels[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        transformed[i] = sigmoid(scores[i]);
    }
    labels[0] = 1.0;
    labels[1] = 0.0;
    CHECK(auroc(transformed, labels) == auroc(scores, labels));
}

TEST_CASE("flipping labels mirrors the AUROC") {
    SubstreamRng rng(5, "synth", 44);
    std::vector<double> scores(40), labels(40), flipped(40);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.gaussian();
        labels[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        flipped[i] = 1.0 - labels[i];
    }
    labels[0] = 1.0;
    labels[1] = 0.0;
    flipped[0] = 0.0;
    flipped[1] = 1.0;
    CHECK(auroc(scores, flipped) == doctest::Approx(1.0 - auroc(scores, labels)).epsilon(1e-12));
}

TEST_CASE("macro AUROC with one label equals the plain AUROC") {
    ScoreMatrix scores(4, 1);
    Matrix labels(4, 1);
    std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
    std::vector<double> y = {0.0, 0.0, 1.0, 1.0};
    for (std::size_t i = 0; i < 4; ++i) {
        scores.at(i, 0) = s[i];
        labels.at(i, 0) = y[i];
    }
    MacroAuroc m = macro_auroc(scores, labels);
    CHECK(m.value == auroc(s, y));
    CHECK(m.included == std::vector<bool>{true});
}

TEST_CASE("macro AUROC averages per-label values") {
    // Label 0 perfectly ranked (AUROC 1), label 1 exactly at chance (0.5).
    ScoreMatrix scores(4, 2);
    Matrix labels(4, 2);
    std::vector<double> s0 = {0.1, 0.2, 0.8, 0.9}, y0 = {0.0, 0.0, 1.0, 1.0};
    std::vector<double> s1 = {0.5, 0.5, 0.5, 0.5}, y1 = {0.0, 1.0, 0.0, 1.0};
    for (std::size_t i = 0; i < 4; ++i) {
        scores.at(i, 0) = s0[i];
        labels.at(i, 0) = y0[i];
        scores.at(i, 1) = s1[i];
        labels.at(i, 1) = y1[i];
    }
    CHECK(macro_auroc(scores, labels).value == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("degenerate labels are excluded with a mask") {
    ScoreMatrix scores(4, 3);
    Matrix labels(4, 3);
    std::vector<double> s = {0.1, 0.2, 0.8, 0.9}, y = {0.0, 0.0, 1.0, 1.0};
    for (std::size_t i = 0; i < 4; ++i) {
        scores.at(i, 0) = s[i];
        labels.at(i, 0) = y[i];
        scores.at(i, 1) = s[3 - i];
        labels.at(i, 1) = y[i];
        scores.at(i, 2) = s[i];
        labels.at(i, 2) = 1.0;  // degenerate: all positive
    }
    MacroAuroc m = macro_auroc(scores, labels);
    CHECK(m.included == std::vector<bool>{true, true, false});
    CHECK(m.value == doctest::Approx(0.5).epsilon(1e-15));  // mean of 1.0 and 0.0
}

TEST_CASE("all labels degenerate is an error") {
    ScoreMatrix scores(3, 1);
    Matrix labels(3, 1);
    for (std::size_t i = 0; i < 3; ++i) labels.at(i, 0) = 1.0;
    CHECK_THROWS_AS(macro_auroc(scores, labels), NumericError);
}

TEST_CASE("indexed macro AUROC matches slicing") {
    SubstreamRng rng(6, "synth", 45);
    ScoreMatrix scores(30, 2);
    Matrix labels(30, 2);
    for (std::size_t i = 0; i < 30; ++i) {
        for (std::size_t l = 0; l < 2; ++l) {
            scores.at(i, l) = rng.gaussian();
            labels.at(i, l) = rng.uniform() < 0.5 ? 1.0 : 0.0;
        }
    }
    std::vector<std::size_t> subset = {0, 2, 2, 5, 9, 11, 14, 17, 20, 23, 26, 29};
    ScoreMatrix sub_scores(subset.size(), 2);
    Matrix sub_labels(subset.size(), 2);
    for (std::size_t k = 0; k < subset.size(); ++k) {
        for (std::size_t l = 0; l < 2; ++l) {
            sub_scores.at(k, l) = scores.at(subset[k], l);
            sub_labels.at(k, l) = labels.at(subset[k], l);
        }
    }
    MacroAuroc indexed = macro_auroc_indexed(scores, labels, subset);
    MacroAuroc sliced = macro_auroc(sub_scores, sub_labels);
    CHECK(indexed.value == sliced.value);
    CHECK(indexed.included == sliced.included);
}

namespace {

struct ProbeFixture {
    EmbeddingMatrix z;
    Matrix y;
    LabelWeights weights;
};

ProbeFixture separable_fixture(std::size_t n, std::uint64_t seed) {
    ProbeFixture f;
    f.z = EmbeddingMatrix(n, 3);
    f.y = Matrix(n, 1);
    SubstreamRng rng(seed, "synth", 46);
    for (std::size_t i = 0; i < n; ++i) {
        double label = rng.uniform() < 0.4 ? 1.0 : 0.0;
        f.y.at(i, 0) = label;
        f.z.at(i, 0) = rng.gaussian() + (label == 1.0 ? 2.5 : -2.5);
        f.z.at(i, 1) = rng.gaussian();
        f.z.at(i, 2) = rng.gaussian();
    }
    f.weights = pos_weights(f.y);
    return f;
}

}  // namespace

TEST_CASE("the probe separates separable embeddings") {
    ProbeFixture f = separable_fixture(400, 7);
    ProbeOptions options;
    options.lambda = 1e-2;
    ProbeModel probe = train_probe(f.z, f.y, f.weights, options);
    CHECK(probe.fitted[0]);
    CHECK(probe.converged[0]);
    CHECK(probe.grad_norms[0] <= options.tol);
    ScoreMatrix scores = probe_predict(probe, f.z);
    CHECK(macro_auroc(scores, f.y).value >= 0.99);
}

TEST_CASE("probe training is restart-stable") {
    ProbeFixture f = separable_fixture(300, 8);
    ProbeOptions cold;
    cold.lambda = 1e-2;
    ProbeModel a = train_probe(f.z, f.y, f.weights, cold);

    ProbeOptions warm = cold;
    warm.init_weights = Matrix(1, 3);
    warm.init_bias = {0.7};
    SubstreamRng rng(9, "synth", 47);
    for (double& v : warm.init_weights.data) v = rng.gaussian();
    ProbeModel b = train_probe(f.z, f.y, f.weights, warm);

    double dist_sq = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        double d = a.weights.at(0, j) - b.weights.at(0, j);
        dist_sq += d * d;
    }
    double db = a.bias[0] - b.bias[0];
    dist_sq += db * db;
    CHECK(std::sqrt(dist_sq) <= 1e-6);
}

TEST_CASE("the fitted probe beats the zero probe on its own objective") {
    ProbeFixture f = separable_fixture(200, 10);
    ProbeOptions options;
    options.lambda = 1e-2;
    ProbeModel probe = train_probe(f.z, f.y, f.weights, options);

    auto objective = [&](const ProbeModel& m) {
        double loss = 0.0;
        for (std::size_t i = 0; i < f.z.rows; ++i) {
            double score = m.bias[0];
            for (std::size_t j = 0; j < 3; ++j) score += m.weights.at(0, j) * f.z.at(i, j);
            double w = f.y.at(i, 0) == 1.0 ? f.weights.w[0] : 1.0;
            double sp = score > 0.0 ? score + std::log1p(std::exp(-score))
                                    : std::log1p(std::exp(score));
            loss += w * (f.y.at(i, 0) == 1.0 ? sp - score : sp);
        }
        loss /= static_cast<double>(f.z.rows);
        double penalty = 0.0;
        for (double v : m.weights.data) penalty += v * v;
        return loss + 0.5 * options.lambda * penalty;
    };

    ProbeModel zero = probe;
    zero.weights = Matrix(1, 3);
    zero.bias = {0.0};
    CHECK(objective(probe) < objective(zero));
}

TEST_CASE("infinite regularization pushes the weights to zero") {
    ProbeFixture f = separable_fixture(200, 11);
    ProbeOptions options;
    options.lambda = 1e12;
    ProbeModel probe = train_probe(f.z, f.y, f.weights, options);
    double norm = 0.0;
    for (double v : probe.weights.data) norm += v * v;
    CHECK(std::sqrt(norm) <= 1e-6);

    // AUROC is scale-invariant, so the shrunken-but-nonzero probe may still
    // rank; the chance level is realized at the limit point W = 0 exactly.
    ScoreMatrix scores = probe_predict(probe, f.z);
    double spread = 0.0;
    for (std::size_t i = 0; i < scores.rows; ++i) {
        spread = std::max(spread, std::abs(scores.at(i, 0) - probe.bias[0]));
    }
    CHECK(spread <= 1e-6);

    ProbeModel shrunk = probe;
    shrunk.weights = Matrix(1, 3);
    CHECK(macro_auroc(probe_predict(shrunk, f.z), f.y).value == 0.5);
}

TEST_CASE("single-class labels are left unfitted") {
    EmbeddingMatrix z(10, 2);
    Matrix y(10, 2);
    SubstreamRng rng(12, "synth", 48);
    for (std::size_t i = 0; i < 10; ++i) {
        z.at(i, 0) = rng.gaussian();
        z.at(i, 1) = rng.gaussian();
        y.at(i, 0) = i < 5 ? 1.0 : 0.0;
        y.at(i, 1) = 0.0;  // degenerate
    }
    LabelWeights w;
    w.w = {1.0, 1.0};
    ProbeOptions options;
    ProbeModel probe = train_probe(z, y, w, options);
    CHECK(probe.fitted[0]);
    CHECK(!probe.fitted[1]);
    for (std::size_t j = 0; j < 2; ++j) CHECK(probe.weights.at(1, j) == 0.0);
}

TEST_CASE("a zero probe scores one half after the sigmoid") {
    ProbeModel probe;
    probe.weights = Matrix(1, 2);
    probe.bias = {0.0};
    probe.fitted = {true};
    probe.converged = {true};
    probe.grad_norms = {0.0};
    EmbeddingMatrix z(3, 2);
    z.at(0, 0) = 1.0;
    z.at(1, 1) = -2.0;
    ScoreMatrix scores = probe_predict(probe, z);
    for (std::size_t i = 0; i < 3; ++i) CHECK(sigmoid(scores.at(i, 0)) == 0.5);
}

TEST_CASE("probe prediction rejects mismatched dimensions") {
    ProbeModel probe;
    probe.weights = Matrix(1, 3);
    probe.bias = {0.0};
    EmbeddingMatrix z(2, 2);
    CHECK_THROWS_AS(probe_predict(probe, z), ConfigError);
}

TEST_CASE("the utilization gap subtracts in a shared unit") {
    CHECK(utilization_gap(82.5, 74.5) == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(utilization_gap(88.6, 88.8) == doctest::Approx(-0.2).epsilon(1e-10));
    CHECK(utilization_gap(0.825, 0.745) == doctest::Approx(0.08).epsilon(1e-12));
    CHECK_THROWS_AS(utilization_gap(0.825, 74.5), ConfigError);
    CHECK_THROWS_AS(utilization_gap(std::nan(""), 0.5), ConfigError);
}
