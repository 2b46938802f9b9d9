#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dprgmi/geometry.hpp"
#include "dprgmi/matrix.hpp"

namespace dprgmi {

// Scores are N x L, higher = more positive.
using ScoreMatrix = Matrix;

// Positive-class weight per label, w_l > 0.
struct LabelWeights {
    std::vector<double> w;
};

// Per-label linear probe on frozen embeddings. Labels whose training data
// had a single class are left unfitted (zero weights) and flagged.
struct ProbeModel {
    Matrix weights;                  // L x d
    std::vector<double> bias;        // L
    double lambda = 0.0;
    std::vector<bool> fitted;        // per label
    std::vector<bool> converged;     // per label
    std::vector<double> grad_norms;  // final inf-norm of the gradient per label
};

struct ProbeOptions {
    double lambda = 1e-2;
    std::size_t max_iters = 100;
    // Gradient inf-norm stop, well above the gradient's evaluation noise
    // floor; restarts then agree far inside 1e-6 parameter distance.
    double tol = 1e-10;
    // Optional warm start; empty = zero init. Used by convexity checks.
    Matrix init_weights;
    std::vector<double> init_bias;
};

// Mann-Whitney AUROC via rank sums, average ranks on ties. Needs both
// classes present.
double auroc(std::span<const double> scores, std::span<const double> labels);

struct MacroAuroc {
    double value = 0.0;
    std::vector<bool> included;  // labels with both classes present
};

// Unweighted mean of per-label AUROC over non-degenerate labels.
MacroAuroc macro_auroc(const ScoreMatrix& scores, const Matrix& labels);
MacroAuroc macro_auroc_indexed(const ScoreMatrix& scores, const Matrix& labels,
                               std::span<const std::size_t> indices);

// Per-label weighted logistic regression with ridge penalty on the weights
// (bias unpenalized), full-batch damped Newton with a backtracking line
// search, run on mean-centered embeddings with the mean folded back into the
// bias. Strictly convex for lambda > 0, so the solution is unique.
ProbeModel train_probe(const EmbeddingMatrix& z_train, const Matrix& y_train,
                       const LabelWeights& weights, const ProbeOptions& options);

ScoreMatrix probe_predict(const ProbeModel& probe, const EmbeddingMatrix& z);

// G = U_probe - U_end2end. Both inputs must share a unit: both fractions in
// [0, 1] or both percent.
double utilization_gap(double u_probe, double u_end2end);

}  // namespace dprgmi
