#include "dprgmi/workflow.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "dprgmi/accountant.hpp"
#include "dprgmi/binio.hpp"
#include "dprgmi/evaluation.hpp"
#include "dprgmi/stats.hpp"

namespace dprgmi {

namespace {

constexpr int kReportVersion = 1;

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

std::string dump_double(double v) { return ordered_json(v).dump(); }

[[noreturn]] void config_fail(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + ": " + what);
}

std::string join_path(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

const ordered_json* find_member(const ordered_json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

void expect_object(const ordered_json& j, const std::string& path) {
    if (!j.is_object()) config_fail(path, "expected an object");
}

void check_keys(const ordered_json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) config_fail(join_path(path, it.key()), "unknown key");
    }
}

double get_number(const ordered_json& j, const std::string& path, const char* key,
                  std::optional<double> fallback = std::nullopt) {
    const ordered_json* m = find_member(j, key);
    if (m == nullptr) {
        if (fallback) return *fallback;
        config_fail(join_path(path, key), "missing");
    }
    if (!m->is_number()) config_fail(join_path(path, key), "expected a number");
    return m->get<double>();
}

// Programmatic configs may carry nonnegative counts as signed integers.
bool json_uint(const ordered_json& j, std::uint64_t& out) {
    if (j.is_number_unsigned()) {
        out = j.get<std::uint64_t>();
        return true;
    }
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(j.get<std::int64_t>());
        return true;
    }
    return false;
}

std::size_t get_count(const ordered_json& j, const std::string& path, const char* key,
                      std::optional<std::size_t> fallback = std::nullopt) {
    const ordered_json* m = find_member(j, key);
    if (m == nullptr) {
        if (fallback) return *fallback;
        config_fail(join_path(path, key), "missing");
    }
    std::uint64_t v = 0;
    if (!json_uint(*m, v)) {
        config_fail(join_path(path, key), "expected a nonnegative integer");
    }
    return static_cast<std::size_t>(v);
}

std::uint64_t get_u64(const ordered_json& j, const std::string& path, const char* key,
                      std::optional<std::uint64_t> fallback = std::nullopt) {
    const ordered_json* m = find_member(j, key);
    if (m == nullptr) {
        if (fallback) return *fallback;
        config_fail(join_path(path, key), "missing");
    }
    std::uint64_t v = 0;
    if (!json_uint(*m, v)) {
        config_fail(join_path(path, key), "expected a nonnegative integer");
    }
    return v;
}

std::string get_string(const ordered_json& j, const std::string& path, const char* key) {
    const ordered_json* m = find_member(j, key);
    if (m == nullptr) config_fail(join_path(path, key), "missing");
    if (!m->is_string()) config_fail(join_path(path, key), "expected a string");
    return m->get<std::string>();
}

double parse_eps(const ordered_json& j, const std::string& path) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        config_fail(path, "expected a positive number or \"inf\"");
    }
    if (!j.is_number()) config_fail(path, "expected a positive number or \"inf\"");
    double v = j.get<double>();
    if (!(v > 0.0)) config_fail(path, "privacy target must be positive");
    return v;
}

ordered_json json_eps(double eps) {
    if (std::isinf(eps)) return "inf";
    return eps;
}

SynthConfig parse_synth(const ordered_json& j, const std::string& path) {
    expect_object(j, path);
    check_keys(j, path,
               {"n_samples", "input_dim", "n_labels", "class_sep", "noise_std", "prevalences",
                "seed"});
    SynthConfig cfg;
    cfg.n_samples = get_count(j, path, "n_samples");
    cfg.input_dim = get_count(j, path, "input_dim");
    cfg.n_labels = get_count(j, path, "n_labels");
    cfg.class_sep = get_number(j, path, "class_sep", 1.0);
    cfg.noise_std = get_number(j, path, "noise_std", 1.0);
    cfg.seed = get_u64(j, path, "seed", std::uint64_t{0});
    const ordered_json* prev = find_member(j, "prevalences");
    if (prev == nullptr || !prev->is_array()) {
        config_fail(join_path(path, "prevalences"), "expected an array of numbers");
    }
    for (const auto& v : *prev) {
        if (!v.is_number()) config_fail(join_path(path, "prevalences"), "expected numbers");
        cfg.prevalences.push_back(v.get<double>());
    }
    cfg.validate();
    return cfg;
}

ordered_json synth_to_json(const SynthConfig& cfg) {
    ordered_json j;
    j["n_samples"] = cfg.n_samples;
    j["input_dim"] = cfg.input_dim;
    j["n_labels"] = cfg.n_labels;
    j["class_sep"] = cfg.class_sep;
    j["noise_std"] = cfg.noise_std;
    j["prevalences"] = cfg.prevalences;
    j["seed"] = cfg.seed;
    return j;
}

DataSource parse_data(const ordered_json& j, const std::string& path) {
    expect_object(j, path);
    DataSource data;
    if (find_member(j, "synth") != nullptr) {
        check_keys(j, path, {"synth"});
        data.is_synth = true;
        data.synth = parse_synth(j.at("synth"), join_path(path, "synth"));
    } else {
        check_keys(j, path, {"train", "test"});
        data.is_synth = false;
        data.train_stem = get_string(j, path, "train");
        data.test_stem = get_string(j, path, "test");
        if (data.train_stem.empty() || data.test_stem.empty()) {
            config_fail(path, "dataset stems must be nonempty");
        }
    }
    return data;
}

ordered_json data_to_json(const DataSource& data) {
    ordered_json j;
    if (data.is_synth) {
        j["synth"] = synth_to_json(data.synth);
    } else {
        j["train"] = data.train_stem;
        j["test"] = data.test_stem;
    }
    return j;
}

PretrainSpec parse_pretrain(const ordered_json& j, const std::string& path) {
    expect_object(j, path);
    check_keys(j, path, {"data", "steps", "batch_size", "learning_rate", "momentum", "seed"});
    PretrainSpec spec;
    const ordered_json* data = find_member(j, "data");
    if (data == nullptr) config_fail(join_path(path, "data"), "missing");
    spec.data = parse_data(*data, join_path(path, "data"));
    spec.steps = get_count(j, path, "steps");
    spec.batch_size = get_count(j, path, "batch_size");
    if (spec.batch_size == 0) config_fail(join_path(path, "batch_size"), "must be positive");
    spec.learning_rate = get_number(j, path, "learning_rate", 0.05);
    spec.momentum = get_number(j, path, "momentum", 0.9);
    spec.seed = get_u64(j, path, "seed", std::uint64_t{0});
    return spec;
}

ordered_json pretrain_to_json(const PretrainSpec& spec) {
    ordered_json j;
    j["data"] = data_to_json(spec.data);
    j["steps"] = spec.steps;
    j["batch_size"] = spec.batch_size;
    j["learning_rate"] = spec.learning_rate;
    j["momentum"] = spec.momentum;
    j["seed"] = spec.seed;
    return j;
}

std::string classify_error(const Error& e) {
    switch (e.exit_code()) {
        case kExitNumeric:
            return "numeric";
        case kExitIo:
            return "io";
        default:
            return "config";
    }
}

std::string stem_basename(const std::string& stem) {
    std::size_t pos = stem.find_last_of("/\\");
    return pos == std::string::npos ? stem : stem.substr(pos + 1);
}

}  // namespace

std::string DataSource::id() const {
    if (is_synth) return "synth-" + fnv1a_hex(synth_to_json(synth).dump());
    return stem_basename(train_stem);
}

std::string InitSpec::name() const {
    switch (mode) {
        case InitMode::checkpoint:
            return "checkpoint";
        case InitMode::pretrain:
            return "pretrain";
        default:
            return "random";
    }
}

void SweepConfig::validate() const {
    if (data.is_synth) {
        data.synth.validate();
    } else if (data.train_stem.empty() || data.test_stem.empty()) {
        throw ConfigError("config: data: dataset stems must be nonempty");
    }
    if (model.hidden_dim == 0 || model.embed_dim == 0) {
        throw ConfigError("config: model: dimensions must be positive");
    }
    if (eps_targets.empty()) throw ConfigError("config: privacy: need at least one target");
    for (double eps : eps_targets) {
        if (std::isnan(eps) || eps <= 0.0) {
            throw ConfigError("config: privacy: targets must be positive or \"inf\"");
        }
    }
    for (std::size_t i = 0; i < eps_targets.size(); ++i) {
        for (std::size_t k = i + 1; k < eps_targets.size(); ++k) {
            if (eps_targets[i] == eps_targets[k]) {
                throw ConfigError("config: privacy: duplicate target");
            }
        }
    }
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("config: privacy: delta not in (0, 1)");
    if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) {
        throw ConfigError("config: privacy: clip_norm must be positive and finite");
    }
    if ((batch_size == 0) == (sample_rate == 0.0)) {
        throw ConfigError("config: train: set exactly one of batch_size and sample_rate");
    }
    if (sample_rate != 0.0 && !(sample_rate > 0.0 && sample_rate <= 1.0)) {
        throw ConfigError("config: train: sample_rate must be in (0, 1]");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("config: train: learning_rate must be nonnegative and finite");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("config: train: momentum must be in [0, 1)");
    }
    if (!(probe_lambda >= 0.0) || !std::isfinite(probe_lambda)) {
        throw ConfigError("config: probe: lambda must be nonnegative and finite");
    }
    if (bootstrap_resamples == 0) {
        throw ConfigError("config: bootstrap: resamples must be positive");
    }
    if (seeds.empty()) throw ConfigError("config: seeds: need at least one seed");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        for (std::size_t k = i + 1; k < seeds.size(); ++k) {
            if (seeds[i] == seeds[k]) throw ConfigError("config: seeds: duplicate seed");
        }
    }
    if (init.mode == InitMode::checkpoint && init.checkpoint_path.empty()) {
        throw ConfigError("config: init: checkpoint path must be nonempty");
    }
    if (init.mode == InitMode::pretrain) {
        if (init.pretrain.data.is_synth) init.pretrain.data.synth.validate();
        if (init.pretrain.batch_size == 0) {
            throw ConfigError("config: init.pretrain: batch_size must be positive");
        }
    }
}

SweepConfig parse_sweep_config(const ordered_json& j) {
    expect_object(j, "");
    check_keys(j, "", {"data", "model", "privacy", "train", "probe", "bootstrap", "seeds", "init"});
    SweepConfig cfg;

    const ordered_json* data = find_member(j, "data");
    if (data == nullptr) config_fail("data", "missing");
    cfg.data = parse_data(*data, "data");

    if (const ordered_json* model = find_member(j, "model")) {
        expect_object(*model, "model");
        check_keys(*model, "model", {"hidden_dim", "embed_dim"});
        cfg.model.hidden_dim = get_count(*model, "model", "hidden_dim", std::size_t{64});
        cfg.model.embed_dim = get_count(*model, "model", "embed_dim", std::size_t{16});
    }

    if (const ordered_json* privacy = find_member(j, "privacy")) {
        expect_object(*privacy, "privacy");
        check_keys(*privacy, "privacy", {"targets", "delta", "clip_norm"});
        if (const ordered_json* targets = find_member(*privacy, "targets")) {
            if (!targets->is_array() || targets->empty()) {
                config_fail("privacy.targets", "expected a nonempty array");
            }
            for (const auto& t : *targets) cfg.eps_targets.push_back(parse_eps(t, "privacy.targets"));
        }
        cfg.delta = get_number(*privacy, "privacy", "delta", 1e-5);
        cfg.clip_norm = get_number(*privacy, "privacy", "clip_norm", 1.0);
    }
    if (cfg.eps_targets.empty()) {
        cfg.eps_targets = {std::numeric_limits<double>::infinity(), 8.0, 2.0, 0.7};
    }

    const ordered_json* train = find_member(j, "train");
    if (train == nullptr) config_fail("train", "missing");
    expect_object(*train, "train");
    check_keys(*train, "train",
               {"steps", "batch_size", "sample_rate", "learning_rate", "momentum"});
    cfg.steps = get_count(*train, "train", "steps");
    cfg.batch_size = get_count(*train, "train", "batch_size", std::size_t{0});
    cfg.sample_rate = get_number(*train, "train", "sample_rate", 0.0);
    cfg.learning_rate = get_number(*train, "train", "learning_rate", 0.05);
    cfg.momentum = get_number(*train, "train", "momentum", 0.9);

    if (const ordered_json* probe = find_member(j, "probe")) {
        expect_object(*probe, "probe");
        check_keys(*probe, "probe", {"lambda"});
        cfg.probe_lambda = get_number(*probe, "probe", "lambda", 1e-2);
    }
    if (const ordered_json* boot = find_member(j, "bootstrap")) {
        expect_object(*boot, "bootstrap");
        check_keys(*boot, "bootstrap", {"resamples"});
        cfg.bootstrap_resamples = get_count(*boot, "bootstrap", "resamples", std::size_t{1000});
    }

    const ordered_json* seeds = find_member(j, "seeds");
    if (seeds == nullptr || !seeds->is_array() || seeds->empty()) {
        config_fail("seeds", "expected a nonempty array of nonnegative integers");
    }
    for (const auto& s : *seeds) {
        std::uint64_t v = 0;
        if (!json_uint(s, v)) config_fail("seeds", "expected nonnegative integers");
        cfg.seeds.push_back(v);
    }

    if (const ordered_json* init = find_member(j, "init")) {
        if (init->is_string()) {
            if (init->get<std::string>() != "random") {
                config_fail("init", "expected \"random\", {\"checkpoint\": ...} or {\"pretrain\": ...}");
            }
            cfg.init.mode = InitMode::random;
        } else if (init->is_object()) {
            if (const ordered_json* ckpt = find_member(*init, "checkpoint")) {
                check_keys(*init, "init", {"checkpoint"});
                if (!ckpt->is_string()) config_fail("init.checkpoint", "expected a string path");
                cfg.init.mode = InitMode::checkpoint;
                cfg.init.checkpoint_path = ckpt->get<std::string>();
            } else if (const ordered_json* pre = find_member(*init, "pretrain")) {
                check_keys(*init, "init", {"pretrain"});
                cfg.init.mode = InitMode::pretrain;
                cfg.init.pretrain = parse_pretrain(*pre, "init.pretrain");
            } else {
                config_fail("init", "expected \"random\", {\"checkpoint\": ...} or {\"pretrain\": ...}");
            }
        } else {
            config_fail("init", "expected \"random\", {\"checkpoint\": ...} or {\"pretrain\": ...}");
        }
    }

    cfg.validate();
    return cfg;
}

SynthConfig parse_synth_config(const ordered_json& j) { return parse_synth(j, "synth"); }

PretrainSpec parse_pretrain_spec(const ordered_json& j) { return parse_pretrain(j, "pretrain"); }

SweepConfig load_sweep_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed JSON in " + path + ": " + e.what());
    }
    return parse_sweep_config(j);
}

ordered_json canonical_config(const SweepConfig& cfg) {
    ordered_json j;
    j["data"] = data_to_json(cfg.data);
    j["model"] = {{"hidden_dim", cfg.model.hidden_dim}, {"embed_dim", cfg.model.embed_dim}};
    ordered_json targets = ordered_json::array();
    for (double eps : cfg.eps_targets) targets.push_back(json_eps(eps));
    j["privacy"] = {{"targets", targets}, {"delta", cfg.delta}, {"clip_norm", cfg.clip_norm}};
    ordered_json train;
    train["steps"] = cfg.steps;
    if (cfg.batch_size > 0) {
        train["batch_size"] = cfg.batch_size;
    } else {
        train["sample_rate"] = cfg.sample_rate;
    }
    train["learning_rate"] = cfg.learning_rate;
    train["momentum"] = cfg.momentum;
    j["train"] = train;
    j["probe"] = {{"lambda", cfg.probe_lambda}};
    j["bootstrap"] = {{"resamples", cfg.bootstrap_resamples}};
    j["seeds"] = cfg.seeds;
    switch (cfg.init.mode) {
        case InitMode::random:
            j["init"] = "random";
            break;
        case InitMode::checkpoint:
            j["init"] = {{"checkpoint", cfg.init.checkpoint_path}};
            break;
        case InitMode::pretrain:
            j["init"] = {{"pretrain", pretrain_to_json(cfg.init.pretrain)}};
            break;
    }
    return j;
}

std::string config_hash(const SweepConfig& cfg) {
    ordered_json j = canonical_config(cfg);
    j.erase("seeds");
    return fnv1a_hex(j.dump());
}

namespace {

Dataset load_split(const DataSource& data, SplitTag tag) {
    if (data.is_synth) {
        SplitDataset split = generate(data.synth);
        return tag == SplitTag::train ? std::move(split.train) : std::move(split.test);
    }
    return read_dataset(tag == SplitTag::train ? data.train_stem : data.test_stem, tag);
}

SplitDataset load_both(const DataSource& data) {
    if (data.is_synth) return generate(data.synth);
    return SplitDataset{read_dataset(data.train_stem, SplitTag::train),
                        read_dataset(data.test_stem, SplitTag::test)};
}

MetricSummary to_summary(const BootstrapResult& r) {
    return MetricSummary{r.point, r.mean, r.std, r.ci_low, r.ci_high, r.resamples, r.dropped};
}

struct RecordInputs {
    const SweepConfig& cfg;
    const ModelConfig& mcfg;
    const Dataset& train;
    const Dataset& test;
    const ParamVector& phi0;
    const EmbeddingMatrix& z0_test;
    const LabelWeights& weights;
    double q;
    std::string dataset_id;
    std::string cfg_hash;
};

DiagnosticRecord make_record(const RecordInputs& in, double eps_target, double sigma,
                             std::uint64_t seed) {
    const SweepConfig& cfg = in.cfg;
    const std::size_t n_train = in.train.x.rows;
    const std::size_t n_test = in.test.x.rows;

    TrainConfig tcfg;
    tcfg.learning_rate = cfg.learning_rate;
    tcfg.momentum = cfg.momentum;
    tcfg.expected_batch = in.q * static_cast<double>(n_train);
    tcfg.seed = seed;
    tcfg.weights = in.weights;

    DiagnosticRecord rec;
    rec.branch = cfg.init.name();
    rec.dataset = in.dataset_id;
    rec.seed = seed;
    rec.eps_target = eps_target;
    rec.is_private = std::isfinite(eps_target);
    rec.config_hash = in.cfg_hash;

    ParamVector params(in.mcfg);
    if (!rec.is_private) {
        std::size_t batch = cfg.batch_size > 0
                                ? cfg.batch_size
                                : static_cast<std::size_t>(tcfg.expected_batch);
        params = train_nonprivate(in.phi0, in.train.x, in.train.y, cfg.steps, batch, tcfg);
        rec.eps_consumed = std::numeric_limits<double>::infinity();
        rec.sigma = 0.0;
    } else {
        PrivacySpec spec;
        spec.eps_target = eps_target;
        spec.delta = cfg.delta;
        spec.clip_norm = cfg.clip_norm;
        spec.sample_rate = in.q;
        spec.steps = cfg.steps;
        spec.sigma = sigma;
        TrainResult result = train_private(in.phi0, in.train.x, in.train.y, spec, tcfg);
        params = std::move(result.params);
        rec.eps_consumed = result.epsilon_spent;
        rec.sigma = sigma;
        if (rec.eps_consumed > eps_target + 1e-3) {
            throw NumericError("consumed epsilon " + dump_double(rec.eps_consumed) +
                               " exceeds target " + dump_double(eps_target));
        }
    }

    ScoreMatrix e2e_scores = predict_logits(params, in.test.x);
    EmbeddingMatrix z_train = embed_batch(params, in.train.x);
    EmbeddingMatrix z_test = embed_batch(params, in.test.x);

    ProbeOptions popt;
    popt.lambda = cfg.probe_lambda;
    ProbeModel probe = train_probe(z_train, in.train.y, in.weights, popt);
    for (std::size_t l = 0; l < probe.fitted.size(); ++l) {
        if (probe.fitted[l] && !probe.converged[l]) {
            std::fprintf(stderr,
                         "warning: probe for label %zu stopped at gradient norm %.3g\n", l,
                         probe.grad_norms[l]);
        }
    }
    ScoreMatrix probe_scores = probe_predict(probe, z_test);

    const Matrix& y_test = in.test.y;
    const EmbeddingMatrix& z0 = in.z0_test;
    auto guard = [](auto&& fn) -> std::optional<double> {
        try {
            return fn();
        } catch (const NumericError&) {
            return std::nullopt;
        }
    };
    std::vector<Statistic> statistics;
    statistics.push_back([&, guard](std::span<const std::size_t> idx) {
        return guard([&] { return macro_auroc_indexed(e2e_scores, y_test, idx).value; });
    });
    statistics.push_back([&, guard](std::span<const std::size_t> idx) {
        return guard([&] { return macro_auroc_indexed(probe_scores, y_test, idx).value; });
    });
    statistics.push_back([&, guard](std::span<const std::size_t> idx) {
        return guard([&] {
            return macro_auroc_indexed(probe_scores, y_test, idx).value -
                   macro_auroc_indexed(e2e_scores, y_test, idx).value;
        });
    });
    statistics.push_back([&](std::span<const std::size_t> idx) -> std::optional<double> {
        return displacement_indexed(z_test, z0, idx);
    });
    statistics.push_back([&, guard](std::span<const std::size_t> idx) {
        return guard([&] { return effective_dimension_indexed(z_test, idx); });
    });

    std::vector<BootstrapResult> boots =
        bootstrap_paired(statistics, n_test, cfg.bootstrap_resamples, seed);
    rec.u_end2end = to_summary(boots[0]);
    rec.u_probe = to_summary(boots[1]);
    rec.gap = to_summary(boots[2]);
    rec.displacement = to_summary(boots[3]);
    rec.d_eff = to_summary(boots[4]);
    return rec;
}

}  // namespace

ParamVector pretrain_encoder(const PretrainSpec& spec, const ModelConfig& model) {
    Dataset source = load_split(spec.data, SplitTag::train);
    ModelConfig mcfg = model;
    mcfg.input_dim = source.x.cols;
    mcfg.n_labels = source.y.cols;
    mcfg.validate();

    TrainConfig tcfg;
    tcfg.learning_rate = spec.learning_rate;
    tcfg.momentum = spec.momentum;
    tcfg.expected_batch = static_cast<double>(spec.batch_size);
    tcfg.seed = spec.seed;
    tcfg.weights = pos_weights(source.y);

    ParamVector init = init_params(mcfg, spec.seed);
    return train_nonprivate(init, source.x, source.y, spec.steps, spec.batch_size, tcfg);
}

DiagnosticProfile run_sweep(const SweepConfig& cfg) {
    cfg.validate();

    SplitDataset data = load_both(cfg.data);
    const Dataset& train = data.train;
    const Dataset& test = data.test;
    if (train.x.cols != test.x.cols || train.y.cols != test.y.cols) {
        throw ConfigError("run_sweep: train/test dimensions disagree");
    }

    ModelConfig mcfg = cfg.model;
    mcfg.input_dim = train.x.cols;
    mcfg.n_labels = train.y.cols;
    mcfg.validate();

    const std::size_t n_train = train.x.rows;
    const double q = cfg.batch_size > 0
                         ? static_cast<double>(cfg.batch_size) / static_cast<double>(n_train)
                         : cfg.sample_rate;
    if (!(q > 0.0 && q <= 1.0)) {
        throw ConfigError("run_sweep: batch_size implies sample rate outside (0, 1]");
    }

    const LabelWeights weights = pos_weights(train.y);

    std::optional<ParamVector> shared_init;
    if (cfg.init.mode == InitMode::checkpoint) {
        shared_init = load_checkpoint(cfg.init.checkpoint_path);
    } else if (cfg.init.mode == InitMode::pretrain) {
        shared_init = pretrain_encoder(cfg.init.pretrain, cfg.model);
    }
    if (shared_init) {
        const ModelConfig got = shared_init->config();
        if (got.input_dim != mcfg.input_dim || got.hidden_dim != mcfg.hidden_dim ||
            got.embed_dim != mcfg.embed_dim || got.n_labels != mcfg.n_labels) {
            throw ConfigError("run_sweep: initialization shape does not match data and model");
        }
    }

    // One calibration per finite target, shared across seeds. A failure is
    // remembered and surfaces as a per-record diagnostic.
    std::map<double, double> sigma_for;
    std::map<double, std::pair<std::string, std::string>> sigma_error;
    for (double eps : cfg.eps_targets) {
        if (!std::isfinite(eps)) continue;
        try {
            sigma_for[eps] = calibrate_sigma(eps, cfg.delta, q, cfg.steps);
        } catch (const Error& e) {
            sigma_error[eps] = {classify_error(e), e.what()};
        }
    }

    DiagnosticProfile profile;
    profile.version = kReportVersion;
    profile.seeds = cfg.seeds;
    profile.config_hash = config_hash(cfg);
    profile.config = canonical_config(cfg);

    const std::string dataset_id = cfg.data.id();

    for (std::uint64_t seed : cfg.seeds) {
        const ParamVector phi0 = shared_init ? *shared_init : init_params(mcfg, seed);
        const EmbeddingMatrix z0_test = embed_batch(phi0, test.x);
        RecordInputs in{cfg,  mcfg,    train,   test, phi0,
                        z0_test, weights, q, dataset_id, profile.config_hash};
        for (double eps : cfg.eps_targets) {
            auto calib = sigma_error.find(eps);
            if (calib != sigma_error.end()) {
                profile.failures.push_back(SweepFailure{cfg.init.name(), in.dataset_id, seed,
                                                        eps, calib->second.first,
                                                        calib->second.second});
                continue;
            }
            const double sigma = std::isfinite(eps) ? sigma_for.at(eps) : 0.0;
            try {
                profile.records.push_back(make_record(in, eps, sigma, seed));
            } catch (const Error& e) {
                profile.failures.push_back(SweepFailure{cfg.init.name(), in.dataset_id, seed,
                                                        eps, classify_error(e), e.what()});
            }
        }
    }
    return profile;
}

namespace {

ordered_json metric_to_json(const MetricSummary& m) {
    ordered_json j;
    j["point"] = m.point;
    j["mean"] = m.mean;
    j["std"] = m.std_dev;
    j["ci_low"] = m.ci_low;
    j["ci_high"] = m.ci_high;
    j["resamples"] = m.resamples;
    j["dropped"] = m.dropped;
    return j;
}

MetricSummary metric_from_json(const ordered_json& j) {
    MetricSummary m;
    m.point = j.at("point").get<double>();
    m.mean = j.at("mean").get<double>();
    m.std_dev = j.at("std").get<double>();
    m.ci_low = j.at("ci_low").get<double>();
    m.ci_high = j.at("ci_high").get<double>();
    m.resamples = j.at("resamples").get<std::size_t>();
    m.dropped = j.at("dropped").get<std::size_t>();
    return m;
}

double eps_from_json(const ordered_json& j, const char* what) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw IoError(std::string("report: bad ") + what);
    }
    if (!j.is_number()) throw IoError(std::string("report: bad ") + what);
    return j.get<double>();
}

void check_unique_records(const std::vector<DiagnosticRecord>& records) {
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (std::size_t k = i + 1; k < records.size(); ++k) {
            if (records[i].branch == records[k].branch &&
                records[i].eps_target == records[k].eps_target &&
                records[i].seed == records[k].seed) {
                throw IoError("report: duplicate record for (branch, eps, seed)");
            }
        }
    }
}

ordered_json profile_to_json(const DiagnosticProfile& profile) {
    ordered_json j;
    j["format"] = "dprgmi-report";
    ordered_json prov;
    prov["version"] = profile.version;
    prov["timestamp"] = profile.timestamp;
    prov["master_seeds"] = profile.seeds;
    prov["config_hash"] = profile.config_hash;
    j["provenance"] = prov;
    j["config"] = profile.config;
    ordered_json records = ordered_json::array();
    for (const DiagnosticRecord& r : profile.records) {
        ordered_json rec;
        rec["branch"] = r.branch;
        rec["dataset"] = r.dataset;
        rec["seed"] = r.seed;
        rec["eps_target"] = json_eps(r.eps_target);
        rec["eps_consumed"] = json_eps(r.eps_consumed);
        rec["private"] = r.is_private;
        rec["sigma"] = r.sigma;
        rec["u_end2end"] = metric_to_json(r.u_end2end);
        rec["u_probe"] = metric_to_json(r.u_probe);
        rec["gap"] = metric_to_json(r.gap);
        rec["displacement"] = metric_to_json(r.displacement);
        rec["d_eff"] = metric_to_json(r.d_eff);
        rec["config_hash"] = r.config_hash;
        records.push_back(std::move(rec));
    }
    j["records"] = records;
    ordered_json failures = ordered_json::array();
    for (const SweepFailure& f : profile.failures) {
        ordered_json fail;
        fail["branch"] = f.branch;
        fail["dataset"] = f.dataset;
        fail["seed"] = f.seed;
        fail["eps_target"] = json_eps(f.eps_target);
        fail["kind"] = f.kind;
        fail["error"] = f.error;
        failures.push_back(std::move(fail));
    }
    j["failures"] = failures;
    return j;
}

DiagnosticProfile profile_from_json(const ordered_json& j) {
    DiagnosticProfile profile;
    if (!j.is_object() || j.value("format", "") != "dprgmi-report") {
        throw IoError("report: not a diagnostic report");
    }
    const ordered_json& prov = j.at("provenance");
    profile.version = prov.at("version").get<int>();
    if (profile.version != kReportVersion) {
        throw IoError("report: unsupported version " + std::to_string(profile.version));
    }
    profile.timestamp = prov.at("timestamp").get<std::string>();
    for (const auto& s : prov.at("master_seeds")) profile.seeds.push_back(s.get<std::uint64_t>());
    profile.config_hash = prov.at("config_hash").get<std::string>();
    profile.config = j.at("config");
    for (const auto& rec : j.at("records")) {
        DiagnosticRecord r;
        r.branch = rec.at("branch").get<std::string>();
        r.dataset = rec.at("dataset").get<std::string>();
        r.seed = rec.at("seed").get<std::uint64_t>();
        r.eps_target = eps_from_json(rec.at("eps_target"), "eps_target");
        r.eps_consumed = eps_from_json(rec.at("eps_consumed"), "eps_consumed");
        r.is_private = rec.at("private").get<bool>();
        r.sigma = rec.at("sigma").get<double>();
        r.u_end2end = metric_from_json(rec.at("u_end2end"));
        r.u_probe = metric_from_json(rec.at("u_probe"));
        r.gap = metric_from_json(rec.at("gap"));
        r.displacement = metric_from_json(rec.at("displacement"));
        r.d_eff = metric_from_json(rec.at("d_eff"));
        r.config_hash = rec.at("config_hash").get<std::string>();
        profile.records.push_back(std::move(r));
    }
    for (const auto& fail : j.at("failures")) {
        SweepFailure f;
        f.branch = fail.at("branch").get<std::string>();
        f.dataset = fail.at("dataset").get<std::string>();
        f.seed = fail.at("seed").get<std::uint64_t>();
        f.eps_target = eps_from_json(fail.at("eps_target"), "eps_target");
        f.kind = fail.at("kind").get<std::string>();
        f.error = fail.at("error").get<std::string>();
        profile.failures.push_back(std::move(f));
    }
    check_unique_records(profile.records);
    return profile;
}

}  // namespace

void write_report(const DiagnosticProfile& profile, const std::string& path) {
    check_unique_records(profile.records);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open report for writing: " + path);
    out << profile_to_json(profile).dump(2) << '\n';
    if (!out) throw IoError("write failed for report: " + path);
}

DiagnosticProfile read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report: " + path);
    ordered_json j;
    try {
        in >> j;
        return profile_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed report " + path + ": " + e.what());
    }
}

std::string format_percent(double fraction) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
    return buf;
}

namespace {

std::string format_eps(double eps) {
    if (std::isinf(eps)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", eps);
    return buf;
}

std::string pm_percent(const MetricSummary& m) {
    return format_percent(m.mean) + " ± " + format_percent(m.std_dev);
}

std::string pm_raw(const MetricSummary& m) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.4g ± %.2g", m.mean, m.std_dev);
    return buf;
}

}  // namespace

std::string render_table(const DiagnosticProfile& profile) {
    const std::vector<std::string> header = {"initialization", "eps",          "auroc_end2end",
                                             "auroc_probe",    "gap",          "displacement",
                                             "d_eff",          "seed"};
    std::vector<std::vector<std::string>> rows;
    rows.push_back(header);
    for (const DiagnosticRecord& r : profile.records) {
        rows.push_back({r.branch, format_eps(r.eps_target), pm_percent(r.u_end2end),
                        pm_percent(r.u_probe), pm_percent(r.gap), pm_raw(r.displacement),
                        pm_raw(r.d_eff), std::to_string(r.seed)});
    }
    // Column widths in display columns, not bytes: the ± sign is multibyte.
    auto display_width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            widths[c] = std::max(widths[c], display_width(row[c]));
        }
    }
    std::ostringstream out;
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << row[c];
            if (c + 1 < row.size()) {
                out << std::string(widths[c] - display_width(row[c]) + 2, ' ');
            }
        }
        out << '\n';
    }
    if (!profile.failures.empty()) {
        out << '\n' << profile.failures.size() << " failed record(s):\n";
        for (const SweepFailure& f : profile.failures) {
            out << "  " << f.branch << " eps=" << format_eps(f.eps_target) << " seed=" << f.seed
                << " [" << f.kind << "] " << f.error << '\n';
        }
    }
    return out.str();
}

void write_report_csv(const DiagnosticProfile& profile, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open csv for writing: " + path);
    out << "initialization,eps_target,eps_consumed,sigma,seed,"
           "auroc_end2end,auroc_end2end_std,auroc_probe,auroc_probe_std,"
           "gap,gap_std,displacement,displacement_std,d_eff,d_eff_std\n";
    for (const DiagnosticRecord& r : profile.records) {
        out << r.branch << ',' << format_eps(r.eps_target) << ',' << format_eps(r.eps_consumed)
            << ',' << dump_double(r.sigma) << ',' << r.seed << ',' << dump_double(r.u_end2end.point)
            << ',' << dump_double(r.u_end2end.std_dev) << ',' << dump_double(r.u_probe.point)
            << ',' << dump_double(r.u_probe.std_dev) << ',' << dump_double(r.gap.point) << ','
            << dump_double(r.gap.std_dev) << ',' << dump_double(r.displacement.point) << ','
            << dump_double(r.displacement.std_dev) << ',' << dump_double(r.d_eff.point) << ','
            << dump_double(r.d_eff.std_dev) << '\n';
    }
    if (!out) throw IoError("write failed for csv: " + path);
}

CorrelationTable correlate_profiles(const std::vector<DiagnosticProfile>& profiles,
                                    bool include_nonprivate) {
    std::vector<double> u, g, dl, de;
    for (const DiagnosticProfile& p : profiles) {
        for (const DiagnosticRecord& r : p.records) {
            if (!include_nonprivate && !std::isfinite(r.eps_target)) continue;
            u.push_back(r.u_end2end.point);
            g.push_back(r.gap.point);
            dl.push_back(r.displacement.point);
            de.push_back(r.d_eff.point);
        }
    }
    if (u.size() < 2) {
        throw ConfigError("correlate: need at least 2 records, got " + std::to_string(u.size()));
    }
    CorrelationTable table;
    table.n_records = u.size();
    table.rho_gap = spearman(u, g);
    table.rho_displacement = spearman(u, dl);
    table.rho_deff = spearman(u, de);
    return table;
}

namespace {

constexpr char kEmbeddingMagic[4] = {'D', 'P', 'R', 'G'};
constexpr std::uint16_t kEmbeddingVersion = 1;
constexpr std::uint64_t kMaxDim = 1ull << 24;

}  // namespace

void write_embeddings(const EmbeddingMatrix& z, const std::string& path) {
    if (z.rows == 0 || z.cols == 0) throw ConfigError("write_embeddings: empty matrix");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open embedding file for writing: " + path);
    binio::write_magic(out, kEmbeddingMagic);
    binio::write_le<std::uint16_t>(out, kEmbeddingVersion);
    binio::write_le<std::uint16_t>(out, 0);  // flags
    binio::write_le<std::uint64_t>(out, z.rows);
    binio::write_le<std::uint64_t>(out, z.cols);
    for (double v : z.data) {
        float f = static_cast<float>(v);
        if (!std::isfinite(f)) throw NumericError("write_embeddings: value outside 32-bit range");
        binio::write_f32(out, f);
    }
    if (!out) throw IoError("write failed for embedding file: " + path);
}

EmbeddingMatrix read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding file: " + path);
    binio::expect_magic(in, kEmbeddingMagic, "embedding");
    auto version = binio::read_le<std::uint16_t>(in, "embedding version");
    if (version != kEmbeddingVersion) {
        throw IoError("unsupported embedding version " + std::to_string(version));
    }
    auto flags = binio::read_le<std::uint16_t>(in, "embedding flags");
    if (flags != 0) throw IoError("unsupported embedding flags");
    auto n = binio::read_le<std::uint64_t>(in, "embedding row count");
    auto d = binio::read_le<std::uint64_t>(in, "embedding column count");
    if (n == 0 || d == 0) throw IoError("embedding file declares an empty matrix");
    if (n > kMaxDim || d > kMaxDim || n > kMaxDim * kMaxDim / d) {
        throw IoError("embedding dimensions overflow");
    }
    EmbeddingMatrix z(n, d);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        z.data[i] = binio::read_f32(in, "embedding data");
    }
    in.peek();
    if (!in.eof()) throw IoError("trailing bytes after embedding payload");
    return z;
}

void write_labels_csv(const Matrix& y, const std::string& path) {
    require_binary(y, "write_labels_csv");
    if (y.rows == 0 || y.cols == 0) throw ConfigError("write_labels_csv: empty label matrix");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open label file for writing: " + path);
    out << "id";
    for (std::size_t l = 0; l < y.cols; ++l) out << ",label_" << l;
    out << '\n';
    for (std::size_t i = 0; i < y.rows; ++i) {
        out << i;
        for (std::size_t l = 0; l < y.cols; ++l) out << ',' << (y.at(i, l) == 1.0 ? '1' : '0');
        out << '\n';
    }
    if (!out) throw IoError("write failed for label file: " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    fields.push_back(field);
    return fields;
}

}  // namespace

Matrix read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty label file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> head = split_csv_line(line);
    if (head.size() < 2 || head[0] != "id") {
        throw IoError("label file header must be id,label_0,...: " + path);
    }
    const std::size_t n_labels = head.size() - 1;
    for (std::size_t l = 0; l < n_labels; ++l) {
        if (head[l + 1] != "label_" + std::to_string(l)) {
            throw IoError("label file header must be id,label_0,...: " + path);
        }
    }
    std::vector<double> values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != n_labels + 1) {
            throw IoError("label row " + std::to_string(row) + " has wrong field count");
        }
        if (fields[0] != std::to_string(row)) {
            throw IoError("label row ids must be 0..N-1 in order, got '" + fields[0] + "'");
        }
        for (std::size_t l = 0; l < n_labels; ++l) {
            if (fields[l + 1] == "0") {
                values.push_back(0.0);
            } else if (fields[l + 1] == "1") {
                values.push_back(1.0);
            } else {
                throw IoError("label values must be 0 or 1, got '" + fields[l + 1] + "'");
            }
        }
        ++row;
    }
    if (row == 0) throw IoError("label file has no data rows: " + path);
    Matrix y(row, n_labels);
    y.data = std::move(values);
    return y;
}

void write_dataset(const Dataset& data, const std::string& stem) {
    if (data.x.rows != data.y.rows) throw ConfigError("write_dataset: row mismatch");
    write_embeddings(data.x, stem + ".features.bin");
    write_labels_csv(data.y, stem + ".labels.csv");
}

Dataset read_dataset(const std::string& stem, SplitTag tag) {
    Dataset data;
    data.x = read_embeddings(stem + ".features.bin");
    data.y = read_labels_csv(stem + ".labels.csv");
    data.split = tag;
    if (data.x.rows != data.y.rows) {
        throw IoError("dataset " + stem + ": feature rows " + std::to_string(data.x.rows) +
                      " do not match label rows " + std::to_string(data.y.rows));
    }
    return data;
}

}  // namespace dprgmi
