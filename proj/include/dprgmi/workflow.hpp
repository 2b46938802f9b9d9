#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "dprgmi/dp_optimizer.hpp"
#include "dprgmi/geometry.hpp"
#include "dprgmi/synthdata.hpp"

namespace dprgmi {

using ordered_json = nlohmann::ordered_json;

// Either a synthetic recipe or a pair of dataset file stems
// (<stem>.features.bin + <stem>.labels.csv).
struct DataSource {
    bool is_synth = true;
    SynthConfig synth;
    std::string train_stem;
    std::string test_stem;

    std::string id() const;
};

struct PretrainSpec {
    DataSource data;
    std::size_t steps = 0;
    std::size_t batch_size = 0;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

enum class InitMode { random, checkpoint, pretrain };

struct InitSpec {
    InitMode mode = InitMode::random;
    std::string checkpoint_path;
    PretrainSpec pretrain;

    std::string name() const;
};

struct SweepConfig {
    DataSource data;
    ModelConfig model;  // input_dim and n_labels are taken from the data
    std::vector<double> eps_targets;
    double delta = 1e-5;
    double clip_norm = 1.0;
    std::size_t steps = 0;
    std::size_t batch_size = 0;  // exactly one of batch_size / sample_rate set
    double sample_rate = 0.0;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double probe_lambda = 1e-2;
    std::size_t bootstrap_resamples = 1000;
    std::vector<std::uint64_t> seeds;
    InitSpec init;

    void validate() const;
};

SweepConfig parse_sweep_config(const ordered_json& j);
SweepConfig load_sweep_config(const std::string& path);
SynthConfig parse_synth_config(const ordered_json& j);
PretrainSpec parse_pretrain_spec(const ordered_json& j);
ordered_json canonical_config(const SweepConfig& cfg);
// FNV-1a over the canonical config without the seed list: the hash names the
// experiment, the seeds name the replicates.
std::string config_hash(const SweepConfig& cfg);

struct MetricSummary {
    double point = 0.0;
    double mean = 0.0;
    double std_dev = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t resamples = 0;
    std::size_t dropped = 0;
};

struct DiagnosticRecord {
    std::string branch;
    std::string dataset;
    std::uint64_t seed = 0;
    double eps_target = std::numeric_limits<double>::infinity();
    double eps_consumed = 0.0;
    double sigma = 0.0;
    bool is_private = false;
    MetricSummary u_end2end;
    MetricSummary u_probe;
    MetricSummary gap;
    MetricSummary displacement;
    MetricSummary d_eff;
    std::string config_hash;
};

struct SweepFailure {
    std::string branch;
    std::string dataset;
    std::uint64_t seed = 0;
    double eps_target = 0.0;
    std::string kind;  // "config", "numeric", "io"
    std::string error;
};

struct DiagnosticProfile {
    int version = 1;
    std::string timestamp;  // empty unless explicitly stamped
    std::vector<std::uint64_t> seeds;
    std::string config_hash;
    ordered_json config;
    std::vector<DiagnosticRecord> records;
    std::vector<SweepFailure> failures;
};

// Non-private training on the source task; the checkpoint becomes the shared
// initialization of a branch. hidden/embed dims come from `model`.
ParamVector pretrain_encoder(const PretrainSpec& spec, const ModelConfig& model);

DiagnosticProfile run_sweep(const SweepConfig& cfg);

void write_report(const DiagnosticProfile& profile, const std::string& path);
DiagnosticProfile read_report(const std::string& path);
void write_report_csv(const DiagnosticProfile& profile, const std::string& path);

// Plain-text table, one row per record: Initialization, eps, AUROC_end2end,
// AUROC_probe, G, Delta, d_eff (AUROC and G in percent, mean +/- std).
std::string render_table(const DiagnosticProfile& profile);

// 0.745 -> "74.5"
std::string format_percent(double fraction);

struct CorrelationTable {
    std::size_t n_records = 0;
    double rho_gap = 0.0;
    double rho_displacement = 0.0;
    double rho_deff = 0.0;
};

// Spearman rank correlation of end-to-end AUROC against G, Delta, d_eff over
// the pooled records; non-private rows excluded unless asked for.
CorrelationTable correlate_profiles(const std::vector<DiagnosticProfile>& profiles,
                                    bool include_nonprivate);

// Embedding container: "DPRG", version u16=1, flags u16=0, N u64, d u64,
// then N*d float32 little-endian row-major.
void write_embeddings(const EmbeddingMatrix& z, const std::string& path);
EmbeddingMatrix read_embeddings(const std::string& path);

// Labels: CSV with header id,label_0,...,label_{L-1}, values 0/1.
void write_labels_csv(const Matrix& y, const std::string& path);
Matrix read_labels_csv(const std::string& path);

// A dataset on disk is <stem>.features.bin (the embedding container holding
// the feature matrix) plus <stem>.labels.csv.
void write_dataset(const Dataset& data, const std::string& stem);
Dataset read_dataset(const std::string& stem, SplitTag tag);

}  // namespace dprgmi
