#include "dprgmi/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dprgmi/errors.hpp"
#include "dprgmi/rng.hpp"

namespace dprgmi {

void SynthConfig::validate() const {
    if (n_samples < 2) throw ConfigError("synth: n_samples must be at least 2");
    if (input_dim == 0) throw ConfigError("synth: input_dim must be positive");
    if (n_labels == 0) throw ConfigError("synth: n_labels must be positive");
    if (input_dim < n_labels) {
        throw ConfigError("synth: input_dim must be at least n_labels");
    }
    if (!(class_sep >= 0.0) || !std::isfinite(class_sep)) {
        throw ConfigError("synth: class_sep must be nonnegative and finite");
    }
    if (!(noise_std > 0.0) || !std::isfinite(noise_std)) {
        throw ConfigError("synth: noise_std must be positive and finite");
    }
    if (prevalences.size() != n_labels) {
        throw ConfigError("synth: need one prevalence per label");
    }
    for (std::size_t l = 0; l < n_labels; ++l) {
        if (!(prevalences[l] > 0.0 && prevalences[l] < 1.0)) {
            throw ConfigError("synth: prevalence " + std::to_string(l) +
                              " must be in (0, 1)");
        }
    }
}

namespace {

Dataset generate_full(const SynthConfig& cfg) {
    const std::size_t n = cfg.n_samples;
    const std::size_t p = cfg.input_dim;
    const std::size_t n_labels = cfg.n_labels;

    Matrix directions(n_labels, p);
    {
        SubstreamRng rng(cfg.seed, "synth", 0);
        rng.gaussian_fill(directions.data);
        // Modified Gram-Schmidt; near-dependence has probability zero but is
        // still rejected rather than normalized into garbage.
        for (std::size_t l = 0; l < n_labels; ++l) {
            auto u = directions.row(l);
            for (std::size_t m = 0; m < l; ++m) {
                auto v = directions.row(m);
                double dot = 0.0;
                for (std::size_t j = 0; j < p; ++j) dot += u[j] * v[j];
                for (std::size_t j = 0; j < p; ++j) u[j] -= dot * v[j];
            }
            double norm = 0.0;
            for (std::size_t j = 0; j < p; ++j) norm += u[j] * u[j];
            norm = std::sqrt(norm);
            if (norm < 1e-9) throw NumericError("synth: degenerate label directions");
            for (std::size_t j = 0; j < p; ++j) u[j] /= norm;
        }
    }

    Dataset data{Matrix(n, p), Matrix(n, n_labels), SplitTag::train};
    {
        SubstreamRng rng(cfg.seed, "synth", 1);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t l = 0; l < n_labels; ++l) {
                data.y.at(i, l) = rng.uniform() < cfg.prevalences[l] ? 1.0 : 0.0;
            }
        }
    }
    {
        SubstreamRng rng(cfg.seed, "synth", 2);
        std::vector<double> noise(p);
        for (std::size_t i = 0; i < n; ++i) {
            rng.gaussian_fill(noise);
            auto row = data.x.row(i);
            for (std::size_t j = 0; j < p; ++j) row[j] = cfg.noise_std * noise[j];
            for (std::size_t l = 0; l < n_labels; ++l) {
                if (data.y.at(i, l) != 1.0) continue;
                auto u = directions.row(l);
                for (std::size_t j = 0; j < p; ++j) row[j] += cfg.class_sep * u[j];
            }
        }
    }
    return data;
}

}  // namespace

SplitDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    Dataset data = generate_full(cfg);
    const std::size_t n = data.x.rows;

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    SubstreamRng rng(cfg.seed, "synth", 3);
    for (std::size_t i = n - 1; i > 0; --i) {
        std::size_t j = rng.bounded_u64(i + 1);
        std::swap(perm[i], perm[j]);
    }

    const std::size_t n_train = n * 4 / 5;
    std::vector<std::size_t> train_idx(perm.begin(),
                                       perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                                      perm.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    auto gather = [&](const std::vector<std::size_t>& idx, SplitTag tag) {
        Dataset out{Matrix(idx.size(), data.x.cols), Matrix(idx.size(), data.y.cols), tag};
        for (std::size_t k = 0; k < idx.size(); ++k) {
            auto xr = data.x.row(idx[k]);
            std::copy(xr.begin(), xr.end(), out.x.row(k).begin());
            auto yr = data.y.row(idx[k]);
            std::copy(yr.begin(), yr.end(), out.y.row(k).begin());
        }
        return out;
    };
    return SplitDataset{gather(train_idx, SplitTag::train), gather(test_idx, SplitTag::test)};
}

}  // namespace dprgmi
