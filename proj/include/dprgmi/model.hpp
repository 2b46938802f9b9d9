#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dprgmi/errors.hpp"
#include "dprgmi/evaluation.hpp"
#include "dprgmi/matrix.hpp"

namespace dprgmi {

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 16;
    std::size_t n_labels = 0;

    void validate() const;
};

// Two-layer tanh encoder with a linear multi-label head.
//   a1 = W1 x + b1,  h1 = tanh(a1),  e = W2 h1 + b2,  z = Wh e + bh
// Flattening order is fixed: W1, b1, W2, b2, Wh, bh, each row-major.
struct ParamVector {
    Matrix w1, w2, wh;
    std::vector<double> b1, b2, bh;

    ParamVector() = default;
    explicit ParamVector(const ModelConfig& cfg);

    ModelConfig config() const;
    std::size_t total_size() const;
    double l2_norm() const;
    void scale(double alpha);
    void add_scaled(const ParamVector& other, double alpha);
    void set_zero();

    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);
};

using GradientVector = ParamVector;

// Scratch buffers for one forward/backward pass; reusable across samples.
struct ForwardCache {
    std::vector<double> a1, h1, e, z;

    explicit ForwardCache(const ModelConfig& cfg)
        : a1(cfg.hidden_dim), h1(cfg.hidden_dim), e(cfg.embed_dim), z(cfg.n_labels) {}
};

ParamVector init_params(const ModelConfig& cfg, std::uint64_t seed);

void forward(const ParamVector& params, std::span<const double> x, ForwardCache& cache);

// Weighted sigmoid cross-entropy of one sample's logits, summed over labels.
double sample_loss(std::span<const double> logits, std::span<const double> y,
                   const LabelWeights& weights);

// Overwrites grad with the loss gradient for one sample; returns the loss.
double per_sample_gradient(const ParamVector& params, std::span<const double> x,
                           std::span<const double> y, const LabelWeights& weights,
                           ForwardCache& cache, GradientVector& grad);

EmbeddingMatrix embed_batch(const ParamVector& params, const Matrix& x);
ScoreMatrix predict_logits(const ParamVector& params, const Matrix& x);

// w_l = (#negatives / #positives) per label column.
LabelWeights pos_weights(const Matrix& labels);

void save_checkpoint(const ParamVector& params, const std::string& path);
ParamVector load_checkpoint(const std::string& path);

}  // namespace dprgmi
