#pragma once

#include "fedsplit/data.hpp"
#include "fedsplit/protocol.hpp"
#include "fedsplit/strategy.hpp"
#include "fedsplit/types.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace fedsplit {

using ordered_json = nlohmann::ordered_json;

// Full description of one experiment. Defaults mirror the reference setting
// (20 clients, 200 rounds, 5 local epochs, batch 64, rate 0.005, lambda 5,
// synthetic ratio 0.5, initial head interval 5, unit temperature).
struct ExperimentConfig {
    int schema_version = 1;

    // synthetic task
    int classes = 10;
    Eigen::Index dim = 32;
    Eigen::Index per_class = 200;
    Scalar separation = 3.0;
    // When set, the task and its partition are derived from this seed instead
    // of the run's master seed, so different master seeds share one dataset.
    std::optional<std::uint64_t> data_seed;

    // partition
    std::string partition_kind = "dirichlet";  // "dirichlet" | "pathological"
    Scalar dirichlet_beta = 0.1;
    int classes_per_client = 2;

    // federation
    int clients = 20;
    Scalar participation = 1.0;
    int rounds = 200;

    // model
    std::vector<Eigen::Index> hidden = {32};
    Eigen::Index embedding = 16;

    TrainConfig train;

    // mixed-set construction
    Scalar synthetic_ratio = 0.5;
    Scalar label_smoothing = 0.0;
    bool normalize_gamma = false;

    // head-interval scheduling
    int tau0 = 5;
    int tau_min = 1;
    int tau_max = 50;
    HeadWeighting head_weighting = HeadWeighting::data_size;

    StrategySpec strategy;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string output_dir = "results";
};

// Throws ConfigError naming the offending field.
void validate(const ExperimentConfig& cfg);

ordered_json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const ordered_json& j);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

ordered_json round_log_to_json(const RoundLog& log);

// Deterministic construction helpers shared by the harness and tests.
std::vector<ClientShard> build_shards(const ExperimentConfig& cfg, std::uint64_t master_seed);
void init_federation(const ExperimentConfig& cfg, std::uint64_t master_seed, ServerState& server,
                     std::vector<ClientState>& clients);

// One complete run of a strategy under one master seed. The returned logs are
// numbered 0 (initial-model evaluation) through rounds (post-round states);
// a fine-tuning strategy appends one extra flagged record.
struct RunResult {
    std::vector<RoundLog> logs;
    ServerState server;
    std::vector<ClientState> clients;
    std::vector<ClientShard> shards;
};

RunResult run_strategy(const StrategySpec& spec, const ExperimentConfig& cfg,
                       std::uint64_t master_seed, std::vector<std::string>* trace = nullptr,
                       const std::string& checkpoint_dir = "");

// Per-seed summary row; mirrors the summary CSV columns.
struct SeedSummary {
    std::string strategy;
    std::uint64_t seed = 0;
    int rounds = 0;
    Scalar final_mean_acc = 0.0;
    Scalar best_mean_acc = 0.0;
    int final_tau = 0;
};

struct ExperimentResult {
    std::vector<SeedSummary> rows;
    Scalar mean_final = 0.0;
    Scalar std_final = 0.0;  // sample standard deviation over seeds
    std::vector<std::string> jsonl_paths;
    std::string csv_path;
};

// Runs every seed in the config, writes one JSONL metrics file per seed plus a
// summary CSV (header: strategy,seed,rounds,final_mean_acc,best_mean_acc,final_tau),
// and reports the across-seed mean and standard deviation.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// One full run per alpha with the optimizer bypassed; `sync` picks the head
// aggregation schedule (`tau` applies to fixed_interval).
struct SweepResult {
    std::vector<Scalar> alphas;
    std::vector<ExperimentResult> per_alpha;
};

SweepResult fixed_alpha_sweep(const std::vector<Scalar>& alphas, HeadSync sync, int tau,
                              ExperimentConfig cfg);

// Full method and its ablations on identical seeds/data.
std::vector<ExperimentResult> run_ablations(ExperimentConfig cfg);

// Per-label accuracies of every client's final model on a class-uniform test
// set, for the full method vs. a never-synchronized-heads control.
struct LabelwiseRow {
    std::string strategy;
    std::uint64_t seed = 0;
    int client = -1;
    int label = -1;
    Scalar acc = 0.0;  // NaN when the label is absent from the test set
    bool missing_locally = false;
};

std::vector<LabelwiseRow> labelwise_compare(ExperimentConfig cfg, Eigen::Index test_per_class);
void write_labelwise_csv(const std::vector<LabelwiseRow>& rows, const std::string& path);

Scalar sample_std(const std::vector<Scalar>& values);

}  // namespace fedsplit
