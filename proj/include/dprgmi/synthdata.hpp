#pragma once

#include <cstdint>
#include <vector>

#include "dprgmi/matrix.hpp"

namespace dprgmi {

// Multi-label Gaussian bump data: each positive label shifts the sample by
// class_sep along its own direction (directions orthonormal), plus isotropic
// noise. Stands in for large imaging corpora at desk scale.
struct SynthConfig {
    std::size_t n_samples = 0;
    std::size_t input_dim = 0;
    std::size_t n_labels = 0;
    double class_sep = 1.0;
    double noise_std = 1.0;
    std::vector<double> prevalences;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class SplitTag { train, test };

struct Dataset {
    Matrix x;
    Matrix y;
    SplitTag split = SplitTag::train;
};

struct SplitDataset {
    Dataset train;
    Dataset test;
};

// Seeded generation plus a random 80/20 partition; both halves keep the
// original row order. Same config, same bytes.
SplitDataset generate(const SynthConfig& cfg);

}  // namespace dprgmi
