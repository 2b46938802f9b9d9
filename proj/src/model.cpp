#include "dprgmi/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "dprgmi/binio.hpp"
#include "dprgmi/parallel.hpp"
#include "dprgmi/rng.hpp"

namespace dprgmi {

namespace {

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace

void ModelConfig::validate() const {
    if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
    if (hidden_dim == 0) throw ConfigError("model: hidden_dim must be positive");
    if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
    if (n_labels == 0) throw ConfigError("model: n_labels must be positive");
}

ParamVector::ParamVector(const ModelConfig& cfg)
    : w1(cfg.hidden_dim, cfg.input_dim),
      w2(cfg.embed_dim, cfg.hidden_dim),
      wh(cfg.n_labels, cfg.embed_dim),
      b1(cfg.hidden_dim, 0.0),
      b2(cfg.embed_dim, 0.0),
      bh(cfg.n_labels, 0.0) {}

ModelConfig ParamVector::config() const {
    ModelConfig cfg;
    cfg.input_dim = w1.cols;
    cfg.hidden_dim = w1.rows;
    cfg.embed_dim = w2.rows;
    cfg.n_labels = wh.rows;
    return cfg;
}

std::size_t ParamVector::total_size() const {
    return w1.data.size() + b1.size() + w2.data.size() + b2.size() + wh.data.size() + bh.size();
}

double ParamVector::l2_norm() const {
    double sq = 0.0;
    auto acc = [&sq](const std::vector<double>& v) {
        for (double x : v) sq += x * x;
    };
    acc(w1.data);
    acc(b1);
    acc(w2.data);
    acc(b2);
    acc(wh.data);
    acc(bh);
    return std::sqrt(sq);
}

void ParamVector::scale(double alpha) {
    auto mul = [alpha](std::vector<double>& v) {
        for (double& x : v) x *= alpha;
    };
    mul(w1.data);
    mul(b1);
    mul(w2.data);
    mul(b2);
    mul(wh.data);
    mul(bh);
}

void ParamVector::add_scaled(const ParamVector& other, double alpha) {
    auto axpy = [alpha](std::vector<double>& v, const std::vector<double>& o) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += alpha * o[i];
    };
    axpy(w1.data, other.w1.data);
    axpy(b1, other.b1);
    axpy(w2.data, other.w2.data);
    axpy(b2, other.b2);
    axpy(wh.data, other.wh.data);
    axpy(bh, other.bh);
}

void ParamVector::set_zero() {
    auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    zero(w1.data);
    zero(b1);
    zero(w2.data);
    zero(b2);
    zero(wh.data);
    zero(bh);
}

std::vector<double> ParamVector::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_size());
    auto put = [&flat](const std::vector<double>& v) {
        flat.insert(flat.end(), v.begin(), v.end());
    };
    put(w1.data);
    put(b1);
    put(w2.data);
    put(b2);
    put(wh.data);
    put(bh);
    return flat;
}

void ParamVector::unflatten(std::span<const double> flat) {
    if (flat.size() != total_size()) {
        throw ConfigError("unflatten: expected " + std::to_string(total_size()) +
                          " values, got " + std::to_string(flat.size()));
    }
    std::size_t off = 0;
    auto take = [&](std::vector<double>& v) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
        off += v.size();
    };
    take(w1.data);
    take(b1);
    take(w2.data);
    take(b2);
    take(wh.data);
    take(bh);
}

ParamVector init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamVector params(cfg);
    SubstreamRng rng(seed, "init", 0);
    auto fill = [&rng](Matrix& w, std::size_t fan_in) {
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& x : w.data) x = std_dev * rng.gaussian();
    };
    fill(params.w1, cfg.input_dim);
    fill(params.w2, cfg.hidden_dim);
    fill(params.wh, cfg.embed_dim);
    return params;
}

void forward(const ParamVector& params, std::span<const double> x, ForwardCache& cache) {
    const std::size_t h = params.w1.rows;
    const std::size_t p = params.w1.cols;
    const std::size_t d = params.w2.rows;
    const std::size_t n_labels = params.wh.rows;
    if (x.size() != p) throw ConfigError("forward: input dim mismatch");

    for (std::size_t k = 0; k < h; ++k) {
        auto row = params.w1.row(k);
        double s = params.b1[k];
        for (std::size_t m = 0; m < p; ++m) s += row[m] * x[m];
        cache.a1[k] = s;
        cache.h1[k] = std::tanh(s);
    }
    for (std::size_t j = 0; j < d; ++j) {
        auto row = params.w2.row(j);
        double s = params.b2[j];
        for (std::size_t k = 0; k < h; ++k) s += row[k] * cache.h1[k];
        cache.e[j] = s;
    }
    for (std::size_t l = 0; l < n_labels; ++l) {
        auto row = params.wh.row(l);
        double s = params.bh[l];
        for (std::size_t j = 0; j < d; ++j) s += row[j] * cache.e[j];
        cache.z[l] = s;
    }
}

double sample_loss(std::span<const double> logits, std::span<const double> y,
                   const LabelWeights& weights) {
    const std::size_t n_labels = logits.size();
    if (y.size() != n_labels || weights.w.size() != n_labels) {
        throw ConfigError("sample_loss: label dim mismatch");
    }
    double loss = 0.0;
    for (std::size_t l = 0; l < n_labels; ++l) {
        if (y[l] != 0.0 && y[l] != 1.0) throw ConfigError("sample_loss: labels must be 0 or 1");
        loss += y[l] == 1.0 ? weights.w[l] * softplus(-logits[l]) : softplus(logits[l]);
    }
    return loss;
}

double per_sample_gradient(const ParamVector& params, std::span<const double> x,
                           std::span<const double> y, const LabelWeights& weights,
                           ForwardCache& cache, GradientVector& grad) {
    forward(params, x, cache);
    const std::size_t h = params.w1.rows;
    const std::size_t p = params.w1.cols;
    const std::size_t d = params.w2.rows;
    const std::size_t n_labels = params.wh.rows;
    if (y.size() != n_labels || weights.w.size() != n_labels) {
        throw ConfigError("per_sample_gradient: label dim mismatch");
    }

    double loss = 0.0;
    std::vector<double> dz(n_labels);
    for (std::size_t l = 0; l < n_labels; ++l) {
        if (y[l] == 1.0) {
            loss += weights.w[l] * softplus(-cache.z[l]);
            dz[l] = -weights.w[l] * sigmoid(-cache.z[l]);
        } else {
            loss += softplus(cache.z[l]);
            dz[l] = sigmoid(cache.z[l]);
        }
    }

    for (std::size_t l = 0; l < n_labels; ++l) {
        auto g_row = grad.wh.row(l);
        for (std::size_t j = 0; j < d; ++j) g_row[j] = dz[l] * cache.e[j];
        grad.bh[l] = dz[l];
    }

    std::vector<double> de(d, 0.0);
    for (std::size_t l = 0; l < n_labels; ++l) {
        auto row = params.wh.row(l);
        for (std::size_t j = 0; j < d; ++j) de[j] += dz[l] * row[j];
    }

    for (std::size_t j = 0; j < d; ++j) {
        auto g_row = grad.w2.row(j);
        for (std::size_t k = 0; k < h; ++k) g_row[k] = de[j] * cache.h1[k];
        grad.b2[j] = de[j];
    }

    std::vector<double> da1(h, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        auto row = params.w2.row(j);
        for (std::size_t k = 0; k < h; ++k) da1[k] += de[j] * row[k];
    }
    for (std::size_t k = 0; k < h; ++k) da1[k] *= 1.0 - cache.h1[k] * cache.h1[k];

    for (std::size_t k = 0; k < h; ++k) {
        auto g_row = grad.w1.row(k);
        for (std::size_t m = 0; m < p; ++m) g_row[m] = da1[k] * x[m];
        grad.b1[k] = da1[k];
    }
    return loss;
}

EmbeddingMatrix embed_batch(const ParamVector& params, const Matrix& x) {
    if (x.cols != params.w1.cols) throw ConfigError("embed_batch: input dim mismatch");
    const ModelConfig cfg = params.config();
    EmbeddingMatrix z(x.rows, cfg.embed_dim);
    parallel_for(x.rows, [&](std::size_t i) {
        thread_local ForwardCache cache(cfg);
        if (cache.e.size() != cfg.embed_dim || cache.h1.size() != cfg.hidden_dim ||
            cache.z.size() != cfg.n_labels) {
            cache = ForwardCache(cfg);
        }
        forward(params, x.row(i), cache);
        auto out = z.row(i);
        std::copy(cache.e.begin(), cache.e.end(), out.begin());
    });
    return z;
}

ScoreMatrix predict_logits(const ParamVector& params, const Matrix& x) {
    if (x.cols != params.w1.cols) throw ConfigError("predict_logits: input dim mismatch");
    const ModelConfig cfg = params.config();
    ScoreMatrix scores(x.rows, cfg.n_labels);
    parallel_for(x.rows, [&](std::size_t i) {
        thread_local ForwardCache cache(cfg);
        if (cache.e.size() != cfg.embed_dim || cache.h1.size() != cfg.hidden_dim ||
            cache.z.size() != cfg.n_labels) {
            cache = ForwardCache(cfg);
        }
        forward(params, x.row(i), cache);
        auto out = scores.row(i);
        std::copy(cache.z.begin(), cache.z.end(), out.begin());
    });
    return scores;
}

LabelWeights pos_weights(const Matrix& labels) {
    require_binary(labels, "pos_weights");
    LabelWeights weights;
    weights.w.resize(labels.cols);
    for (std::size_t l = 0; l < labels.cols; ++l) {
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < labels.rows; ++i) {
            if (labels.at(i, l) == 1.0) ++n_pos;
        }
        if (n_pos == 0 || n_pos == labels.rows) {
            throw ConfigError("pos_weights: label " + std::to_string(l) +
                              " is degenerate (single class)");
        }
        weights.w[l] =
            static_cast<double>(labels.rows - n_pos) / static_cast<double>(n_pos);
    }
    return weights;
}

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'P', 'R', 'P'};
constexpr std::uint16_t kCheckpointVersion = 1;

void write_tensor(std::ostream& out, const std::string& name, std::span<const std::size_t> dims,
                  std::span<const double> data) {
    binio::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(dims.size()));
    for (std::size_t d : dims) binio::write_le<std::uint64_t>(out, d);
    for (double v : data) binio::write_f64(out, v);
}

struct RawTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
};

RawTensor read_tensor(std::istream& in) {
    RawTensor t;
    auto name_len = binio::read_le<std::uint16_t>(in, "tensor name length");
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) throw IoError("truncated file while reading tensor name");
    auto rank = binio::read_le<std::uint8_t>(in, "tensor rank");
    std::uint64_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
        std::uint64_t d = binio::read_le<std::uint64_t>(in, "tensor dim");
        if (d == 0 || d > (1u << 24)) throw IoError("tensor dim out of range in checkpoint");
        if (count > (1u << 28) / d) throw IoError("tensor too large in checkpoint");
        count *= d;
        t.dims.push_back(d);
    }
    t.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) t.data[i] = binio::read_f64(in, "tensor data");
    return t;
}

}  // namespace

void save_checkpoint(const ParamVector& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    binio::write_magic(out, kCheckpointMagic);
    binio::write_le<std::uint16_t>(out, kCheckpointVersion);
    binio::write_le<std::uint32_t>(out, 6);
    write_tensor(out, "W1", std::array<std::size_t, 2>{params.w1.rows, params.w1.cols},
                 params.w1.data);
    write_tensor(out, "b1", std::array<std::size_t, 1>{params.b1.size()}, params.b1);
    write_tensor(out, "W2", std::array<std::size_t, 2>{params.w2.rows, params.w2.cols},
                 params.w2.data);
    write_tensor(out, "b2", std::array<std::size_t, 1>{params.b2.size()}, params.b2);
    write_tensor(out, "Wh", std::array<std::size_t, 2>{params.wh.rows, params.wh.cols},
                 params.wh.data);
    write_tensor(out, "bh", std::array<std::size_t, 1>{params.bh.size()}, params.bh);
    if (!out) throw IoError("write failed for checkpoint: " + path);
}

ParamVector load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    binio::expect_magic(in, kCheckpointMagic, "checkpoint");
    auto version = binio::read_le<std::uint16_t>(in, "checkpoint version");
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    auto count = binio::read_le<std::uint32_t>(in, "tensor count");
    if (count != 6) throw IoError("checkpoint must hold exactly 6 tensors");

    const char* expected_names[6] = {"W1", "b1", "W2", "b2", "Wh", "bh"};
    const std::size_t expected_ranks[6] = {2, 1, 2, 1, 2, 1};
    RawTensor tensors[6];
    for (std::size_t i = 0; i < 6; ++i) {
        tensors[i] = read_tensor(in);
        if (tensors[i].name != expected_names[i]) {
            throw IoError("unexpected tensor '" + tensors[i].name + "', wanted '" +
                          expected_names[i] + "'");
        }
        if (tensors[i].dims.size() != expected_ranks[i]) {
            throw IoError("tensor '" + tensors[i].name + "' has wrong rank");
        }
    }
    in.peek();
    if (!in.eof()) throw IoError("trailing bytes after checkpoint payload");

    ModelConfig cfg;
    cfg.hidden_dim = tensors[0].dims[0];
    cfg.input_dim = tensors[0].dims[1];
    cfg.embed_dim = tensors[2].dims[0];
    cfg.n_labels = tensors[4].dims[0];
    if (tensors[1].dims[0] != cfg.hidden_dim || tensors[2].dims[1] != cfg.hidden_dim ||
        tensors[3].dims[0] != cfg.embed_dim || tensors[4].dims[1] != cfg.embed_dim ||
        tensors[5].dims[0] != cfg.n_labels) {
        throw IoError("inconsistent tensor shapes in checkpoint");
    }

    ParamVector params(cfg);
    params.w1.data = std::move(tensors[0].data);
    params.b1 = std::move(tensors[1].data);
    params.w2.data = std::move(tensors[2].data);
    params.b2 = std::move(tensors[3].data);
    params.wh.data = std::move(tensors[4].data);
    params.bh = std::move(tensors[5].data);
    return params;
}

}  // namespace dprgmi
