#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dprgmi/accountant.hpp"
#include "dprgmi/dp_optimizer.hpp"
#include "dprgmi/errors.hpp"
#include "dprgmi/evaluation.hpp"
#include "dprgmi/geometry.hpp"
#include "dprgmi/model.hpp"
#include "dprgmi/parallel.hpp"
#include "dprgmi/synthdata.hpp"
#include "dprgmi/workflow.hpp"

namespace {

using dprgmi::ordered_json;

ordered_json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw dprgmi::IoError("cannot open config: " + path);
    try {
        ordered_json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw dprgmi::IoError("malformed JSON in " + path + ": " + e.what());
    }
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string pick_config(const std::string& local, const std::string& global) {
    if (!local.empty()) return local;
    if (!global.empty()) return global;
    throw dprgmi::ConfigError("no config file given (use --config)");
}

struct TrainPlan {
    double q = 0.0;
    std::size_t plain_batch = 0;
};

TrainPlan resolve_batching(const dprgmi::SweepConfig& cfg, std::size_t n_train) {
    TrainPlan plan;
    plan.q = cfg.batch_size > 0
                 ? static_cast<double>(cfg.batch_size) / static_cast<double>(n_train)
                 : cfg.sample_rate;
    if (!(plan.q > 0.0 && plan.q <= 1.0)) {
        throw dprgmi::ConfigError("batch size implies sample rate outside (0, 1]");
    }
    plan.plain_batch = cfg.batch_size > 0
                           ? cfg.batch_size
                           : static_cast<std::size_t>(plan.q * static_cast<double>(n_train));
    if (plan.plain_batch == 0) {
        throw dprgmi::ConfigError("sample rate implies an empty non-private batch");
    }
    return plan;
}

void cmd_synth(const std::string& config, const std::string& out_train,
               const std::string& out_test, std::optional<std::uint64_t> seed) {
    dprgmi::SynthConfig cfg = dprgmi::parse_synth_config(load_json(config));
    if (seed) cfg.seed = *seed;
    dprgmi::SplitDataset split = dprgmi::generate(cfg);
    dprgmi::write_dataset(split.train, out_train);
    dprgmi::write_dataset(split.test, out_test);
    std::fprintf(stderr, "wrote %s (%zu rows) and %s (%zu rows)\n", out_train.c_str(),
                 split.train.x.rows, out_test.c_str(), split.test.x.rows);
}

void cmd_pretrain(const std::string& config, const std::string& out,
                  std::optional<std::uint64_t> seed) {
    ordered_json j = load_json(config);
    dprgmi::ModelConfig model;
    if (j.is_object() && j.contains("model")) {
        const ordered_json& m = j.at("model");
        if (!m.is_object()) throw dprgmi::ConfigError("config: model: expected an object");
        if (m.contains("hidden_dim")) model.hidden_dim = m.at("hidden_dim").get<std::size_t>();
        if (m.contains("embed_dim")) model.embed_dim = m.at("embed_dim").get<std::size_t>();
        j.erase("model");
    }
    dprgmi::PretrainSpec spec = dprgmi::parse_pretrain_spec(j);
    if (seed) spec.seed = *seed;
    dprgmi::ParamVector params = dprgmi::pretrain_encoder(spec, model);
    dprgmi::save_checkpoint(params, out);
    std::fprintf(stderr, "wrote %s\n", out.c_str());
}

void cmd_train(const std::string& config, const std::string& init_path, const std::string& out,
               std::optional<std::uint64_t> seed) {
    dprgmi::SweepConfig cfg = dprgmi::load_sweep_config(config);
    if (cfg.eps_targets.size() != 1) {
        throw dprgmi::ConfigError("train: config must name exactly one privacy target");
    }
    const double eps = cfg.eps_targets[0];

    dprgmi::Dataset train = cfg.data.is_synth
                                ? dprgmi::generate(cfg.data.synth).train
                                : dprgmi::read_dataset(cfg.data.train_stem, dprgmi::SplitTag::train);
    TrainPlan plan = resolve_batching(cfg, train.x.rows);

    dprgmi::ParamVector init = dprgmi::load_checkpoint(init_path);
    dprgmi::ModelConfig got = init.config();
    if (got.input_dim != train.x.cols || got.n_labels != train.y.cols) {
        throw dprgmi::ConfigError("train: checkpoint shape does not match data");
    }

    dprgmi::TrainConfig tcfg;
    tcfg.learning_rate = cfg.learning_rate;
    tcfg.momentum = cfg.momentum;
    tcfg.expected_batch = plan.q * static_cast<double>(train.x.rows);
    tcfg.seed = seed ? *seed : cfg.seeds.front();
    tcfg.weights = dprgmi::pos_weights(train.y);

    dprgmi::ParamVector params;
    if (std::isfinite(eps)) {
        dprgmi::PrivacySpec spec;
        spec.eps_target = eps;
        spec.delta = cfg.delta;
        spec.clip_norm = cfg.clip_norm;
        spec.sample_rate = plan.q;
        spec.steps = cfg.steps;
        spec.sigma = dprgmi::calibrate_sigma(eps, cfg.delta, plan.q, cfg.steps);
        dprgmi::TrainResult result =
            dprgmi::train_private(init, train.x, train.y, spec, tcfg);
        params = std::move(result.params);
        std::printf("sigma %.17g\n", spec.sigma);
        std::printf("epsilon_consumed %.17g\n", result.epsilon_spent);
    } else {
        params = dprgmi::train_nonprivate(init, train.x, train.y, cfg.steps, plan.plain_batch,
                                          tcfg);
        std::printf("epsilon_consumed inf\n");
    }
    dprgmi::save_checkpoint(params, out);
    std::fprintf(stderr, "wrote %s\n", out.c_str());
}

void cmd_account(double q, double sigma, std::uint64_t steps, double delta) {
    dprgmi::RdpCurve curve =
        dprgmi::rdp_subsampled_gaussian(q, sigma, dprgmi::default_rdp_orders());
    curve = dprgmi::compose(curve, steps);
    dprgmi::EpsResult result = dprgmi::rdp_to_eps(curve, delta);
    std::printf("epsilon %.17g\n", result.epsilon);
    std::printf("best_order %g\n", result.best_order);
}

void cmd_calibrate(double epsilon, double delta, double q, std::uint64_t steps) {
    double sigma = dprgmi::calibrate_sigma(epsilon, delta, q, steps);
    std::printf("sigma %.17g\n", sigma);
}

void cmd_geometry(const std::string& emb_path, const std::string& ref_path) {
    dprgmi::EmbeddingMatrix z = dprgmi::read_embeddings(emb_path);
    std::printf("d_eff %.6g\n", dprgmi::effective_dimension(z));
    if (!ref_path.empty()) {
        dprgmi::EmbeddingMatrix ref = dprgmi::read_embeddings(ref_path);
        std::printf("delta %.6g\n", dprgmi::displacement(z, ref));
    }
}

void cmd_probe(const std::string& train_emb, const std::string& train_labels,
               const std::string& test_emb, const std::string& test_labels, double lambda) {
    dprgmi::EmbeddingMatrix z_train = dprgmi::read_embeddings(train_emb);
    dprgmi::Matrix y_train = dprgmi::read_labels_csv(train_labels);
    dprgmi::EmbeddingMatrix z_test = dprgmi::read_embeddings(test_emb);
    dprgmi::Matrix y_test = dprgmi::read_labels_csv(test_labels);
    if (z_train.rows != y_train.rows || z_test.rows != y_test.rows) {
        throw dprgmi::ConfigError("probe: embedding and label row counts disagree");
    }
    if (y_train.cols != y_test.cols) {
        throw dprgmi::ConfigError("probe: train and test label counts disagree");
    }

    dprgmi::ProbeOptions options;
    options.lambda = lambda;
    dprgmi::LabelWeights weights = dprgmi::pos_weights(y_train);
    dprgmi::ProbeModel probe = dprgmi::train_probe(z_train, y_train, weights, options);
    dprgmi::ScoreMatrix scores = dprgmi::probe_predict(probe, z_test);
    dprgmi::MacroAuroc macro = dprgmi::macro_auroc(scores, y_test);

    std::printf("label  auroc  fitted\n");
    std::vector<double> col_scores(z_test.rows), col_labels(z_test.rows);
    for (std::size_t l = 0; l < y_test.cols; ++l) {
        std::string value = "n/a";
        if (macro.included[l]) {
            for (std::size_t i = 0; i < z_test.rows; ++i) {
                col_scores[i] = scores.at(i, l);
                col_labels[i] = y_test.at(i, l);
            }
            value = dprgmi::format_percent(dprgmi::auroc(col_scores, col_labels));
        }
        std::printf("%-5zu  %-5s  %s\n", l, value.c_str(), probe.fitted[l] ? "yes" : "no");
    }
    std::printf("macro  %s\n", dprgmi::format_percent(macro.value).c_str());
}

void cmd_run(const std::string& config, const std::string& out, const std::string& csv,
             bool stamp, std::optional<std::uint64_t> seed) {
    dprgmi::SweepConfig cfg = dprgmi::load_sweep_config(config);
    if (seed) cfg.seeds = {*seed};
    dprgmi::DiagnosticProfile profile = dprgmi::run_sweep(cfg);
    if (stamp) profile.timestamp = utc_timestamp();
    dprgmi::write_report(profile, out);
    std::fprintf(stderr, "wrote %s\n", out.c_str());
    if (!csv.empty()) {
        dprgmi::write_report_csv(profile, csv);
        std::fprintf(stderr, "wrote %s\n", csv.c_str());
    }
    std::fputs(dprgmi::render_table(profile).c_str(), stdout);
}

void cmd_correlate(const std::vector<std::string>& reports, bool include_nonprivate) {
    std::vector<dprgmi::DiagnosticProfile> profiles;
    profiles.reserve(reports.size());
    for (const std::string& path : reports) profiles.push_back(dprgmi::read_report(path));
    dprgmi::CorrelationTable table = dprgmi::correlate_profiles(profiles, include_nonprivate);
    std::printf("records %zu\n", table.n_records);
    std::printf("metric        rho\n");
    std::printf("gap           %.6g\n", table.rho_gap);
    std::printf("displacement  %.6g\n", table.rho_displacement);
    std::printf("d_eff         %.6g\n", table.rho_deff);
}

void cmd_report(const std::string& in, const std::string& csv) {
    dprgmi::DiagnosticProfile profile = dprgmi::read_report(in);
    if (!csv.empty()) {
        dprgmi::write_report_csv(profile, csv);
        std::fprintf(stderr, "wrote %s\n", csv.c_str());
    }
    std::fputs(dprgmi::render_table(profile).c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"differential-privacy representation diagnostics"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    std::string global_config;
    app.add_option("--seed", seed, "override the master seed");
    app.add_option("--threads", threads, "worker thread count (default 1)");
    app.add_option("--config", global_config, "default config file for subcommands");

    std::string synth_config, synth_out_train, synth_out_test;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset pair");
    synth->add_option("--config", synth_config, "synthetic data config (JSON)");
    synth->add_option("--out-train", synth_out_train, "output stem for the train split")
        ->required();
    synth->add_option("--out-test", synth_out_test, "output stem for the test split")->required();

    std::string pre_config, pre_out;
    CLI::App* pretrain = app.add_subcommand("pretrain", "train a source-task initialization");
    pretrain->add_option("--config", pre_config, "pretraining config (JSON)");
    pretrain->add_option("--out", pre_out, "output checkpoint path")->required();

    std::string train_config, train_init, train_out;
    CLI::App* train = app.add_subcommand("train", "train one encoder from a checkpoint");
    train->add_option("--config", train_config, "sweep config with exactly one privacy target");
    train->add_option("--init", train_init, "initialization checkpoint")->required();
    train->add_option("--out", train_out, "output checkpoint path")->required();

    double acc_q = 0.0, acc_sigma = 0.0, acc_delta = 0.0;
    std::uint64_t acc_steps = 0;
    CLI::App* account = app.add_subcommand("account", "epsilon of a subsampled Gaussian");
    account->add_option("--q", acc_q, "sampling rate")->required();
    account->add_option("--sigma", acc_sigma, "noise multiplier")->required();
    account->add_option("--steps", acc_steps, "composed step count")->required();
    account->add_option("--delta", acc_delta, "target delta")->required();

    double cal_eps = 0.0, cal_delta = 0.0, cal_q = 0.0;
    std::uint64_t cal_steps = 0;
    CLI::App* calibrate = app.add_subcommand("calibrate", "noise multiplier for a target epsilon");
    calibrate->add_option("--epsilon", cal_eps, "target epsilon")->required();
    calibrate->add_option("--delta", cal_delta, "target delta")->required();
    calibrate->add_option("--q", cal_q, "sampling rate")->required();
    calibrate->add_option("--steps", cal_steps, "composed step count")->required();

    std::string geo_emb, geo_ref;
    CLI::App* geometry = app.add_subcommand("geometry", "effective dimension and displacement");
    geometry->add_option("--emb", geo_emb, "embedding file")->required();
    geometry->add_option("--ref", geo_ref, "reference embedding file for displacement");

    std::string probe_train_emb, probe_train_labels, probe_test_emb, probe_test_labels;
    double probe_lambda = 1e-2;
    CLI::App* probe = app.add_subcommand("probe", "linear probe on frozen embeddings");
    probe->add_option("--train-emb", probe_train_emb, "train embedding file")->required();
    probe->add_option("--train-labels", probe_train_labels, "train label CSV")->required();
    probe->add_option("--test-emb", probe_test_emb, "test embedding file")->required();
    probe->add_option("--test-labels", probe_test_labels, "test label CSV")->required();
    probe->add_option("--lambda", probe_lambda, "ridge strength (default 0.01)");

    std::string run_config, run_out, run_csv;
    bool run_stamp = false;
    CLI::App* run = app.add_subcommand("run", "run the full diagnostic sweep");
    run->add_option("--config", run_config, "sweep config (JSON)");
    run->add_option("--out", run_out, "output report path (JSON)")->required();
    run->add_option("--csv", run_csv, "also export the records as CSV");
    run->add_flag("--stamp", run_stamp, "embed the wall-clock time in the report");

    std::vector<std::string> corr_reports;
    bool corr_exclude = false, corr_include = false;
    CLI::App* correlate = app.add_subcommand("correlate", "rank correlations across reports");
    correlate->add_option("--reports", corr_reports, "report files")->required()->expected(-1);
    correlate->add_flag("--exclude-nonprivate", corr_exclude,
                        "exclude eps=inf records (the default)");
    correlate->add_flag("--include-nonprivate", corr_include, "include eps=inf records");

    std::string report_in, report_csv;
    CLI::App* report = app.add_subcommand("report", "render a report as a table");
    report->add_option("--in", report_in, "report file (JSON)")->required();
    report->add_option("--csv", report_csv, "also export the records as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : dprgmi::kExitConfig;
    }

    try {
        if (threads == 0) throw dprgmi::ConfigError("--threads must be at least 1");
        dprgmi::set_worker_threads(threads);
        if (synth->parsed()) {
            cmd_synth(pick_config(synth_config, global_config), synth_out_train, synth_out_test,
                      seed);
        } else if (pretrain->parsed()) {
            cmd_pretrain(pick_config(pre_config, global_config), pre_out, seed);
        } else if (train->parsed()) {
            cmd_train(pick_config(train_config, global_config), train_init, train_out, seed);
        } else if (account->parsed()) {
            cmd_account(acc_q, acc_sigma, acc_steps, acc_delta);
        } else if (calibrate->parsed()) {
            cmd_calibrate(cal_eps, cal_delta, cal_q, cal_steps);
        } else if (geometry->parsed()) {
            cmd_geometry(geo_emb, geo_ref);
        } else if (probe->parsed()) {
            cmd_probe(probe_train_emb, probe_train_labels, probe_test_emb, probe_test_labels,
                      probe_lambda);
        } else if (run->parsed()) {
            cmd_run(pick_config(run_config, global_config), run_out, run_csv, run_stamp, seed);
        } else if (correlate->parsed()) {
            if (corr_exclude && corr_include) {
                throw dprgmi::ConfigError("choose one of --exclude-nonprivate/--include-nonprivate");
            }
            cmd_correlate(corr_reports, corr_include);
        } else if (report->parsed()) {
            cmd_report(report_in, report_csv);
        }
        return dprgmi::kExitOk;
    } catch (const dprgmi::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return dprgmi::kExitNumeric;
    }
}
