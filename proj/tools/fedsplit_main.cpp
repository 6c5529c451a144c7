// Command-line front end: run experiments, sweeps, ablations, and data dumps.
#include <CLI11.hpp>

#include "fedsplit/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace {

using namespace fedsplit;

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t comma = csv.find(',', start);
        const std::size_t end = comma == std::string::npos ? csv.size() : comma;
        if (end > start) parts.push_back(csv.substr(start, end - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return parts;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    for (const std::string& tok : split_list(csv)) {
        try {
            seeds.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad seed '" + tok + "' in --seeds");
        }
    }
    if (seeds.empty()) throw ConfigError("--seeds needs at least one value");
    return seeds;
}

std::vector<Scalar> parse_alpha_list(const std::string& csv) {
    std::vector<Scalar> alphas;
    for (const std::string& tok : split_list(csv)) {
        try {
            alphas.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad alpha '" + tok + "' in --alphas");
        }
    }
    if (alphas.empty()) throw ConfigError("--alphas needs at least one value");
    return alphas;
}

// Flag overrides shared by every subcommand. A flag the user did not pass
// leaves the config (file or default) untouched.
struct Overrides {
    std::string config_path, strategy, seeds, partition, hidden, output;
    int rounds = 0, clients = 0, classes = 0, classes_per_client = 0, tau0 = 0, epochs = 0;
    Scalar participation = 0, beta = 0, separation = 0, lr = 0, lambda = 0, ratio = 0;
    long long dim = 0, per_class = 0, batch = 0, embedding = 0;
    std::uint64_t data_seed = 0;

    CLI::Option* o_config = nullptr;
    CLI::Option* o_strategy = nullptr;
    CLI::Option* o_seeds = nullptr;
    CLI::Option* o_partition = nullptr;
    CLI::Option* o_hidden = nullptr;
    CLI::Option* o_output = nullptr;
    CLI::Option* o_rounds = nullptr;
    CLI::Option* o_clients = nullptr;
    CLI::Option* o_classes = nullptr;
    CLI::Option* o_cpc = nullptr;
    CLI::Option* o_tau0 = nullptr;
    CLI::Option* o_epochs = nullptr;
    CLI::Option* o_participation = nullptr;
    CLI::Option* o_beta = nullptr;
    CLI::Option* o_separation = nullptr;
    CLI::Option* o_lr = nullptr;
    CLI::Option* o_lambda = nullptr;
    CLI::Option* o_ratio = nullptr;
    CLI::Option* o_dim = nullptr;
    CLI::Option* o_per_class = nullptr;
    CLI::Option* o_batch = nullptr;
    CLI::Option* o_embedding = nullptr;
    CLI::Option* o_data_seed = nullptr;

    void attach(CLI::App* cmd) {
        o_config = cmd->add_option("-c,--config", config_path, "JSON experiment config");
        o_strategy = cmd->add_option("--strategy", strategy, "strategy preset name");
        o_seeds = cmd->add_option("--seeds", seeds, "comma-separated master seeds");
        o_rounds = cmd->add_option("--rounds", rounds, "communication rounds");
        o_clients = cmd->add_option("--clients", clients, "number of clients");
        o_participation =
            cmd->add_option("--participation", participation, "participating fraction per round");
        o_partition =
            cmd->add_option("--partition", partition, "'dirichlet' or 'pathological'");
        o_beta = cmd->add_option("--beta", beta, "Dirichlet concentration");
        o_cpc = cmd->add_option("--classes-per-client", classes_per_client,
                                "classes per client for the pathological partition");
        o_classes = cmd->add_option("--classes", classes, "number of classes");
        o_dim = cmd->add_option("--dim", dim, "input feature dimension");
        o_per_class = cmd->add_option("--per-class", per_class, "samples drawn per class");
        o_separation = cmd->add_option("--separation", separation, "class-mean separation");
        o_data_seed = cmd->add_option("--data-seed", data_seed,
                                      "pin data generation to one seed across master seeds");
        o_hidden = cmd->add_option("--hidden", hidden, "hidden layer sizes, e.g. 64,32");
        o_embedding = cmd->add_option("--embedding", embedding, "embedding dimension");
        o_lr = cmd->add_option("--lr", lr, "SGD learning rate for both blocks");
        o_epochs = cmd->add_option("--epochs", epochs, "local epochs per phase");
        o_batch = cmd->add_option("--batch", batch, "minibatch size");
        o_lambda = cmd->add_option("--lambda", lambda, "prototype regularization weight");
        o_ratio = cmd->add_option("--ratio", ratio, "synthetic share r of the head training set");
        o_tau0 = cmd->add_option("--tau0", tau0, "initial head-sync interval");
        o_output = cmd->add_option("-o,--output", output, "output directory");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (o_config->count()) cfg = load_config(config_path);
        if (o_strategy->count()) cfg.strategy = strategy_preset(strategy);
        if (o_seeds->count()) cfg.seeds = parse_seed_list(seeds);
        if (o_rounds->count()) cfg.rounds = rounds;
        if (o_clients->count()) cfg.clients = clients;
        if (o_participation->count()) cfg.participation = participation;
        if (o_partition->count()) cfg.partition_kind = partition;
        if (o_beta->count()) cfg.dirichlet_beta = beta;
        if (o_cpc->count()) cfg.classes_per_client = classes_per_client;
        if (o_classes->count()) cfg.classes = classes;
        if (o_dim->count()) cfg.dim = dim;
        if (o_per_class->count()) cfg.per_class = per_class;
        if (o_separation->count()) cfg.separation = separation;
        if (o_data_seed->count()) cfg.data_seed = data_seed;
        if (o_hidden->count()) {
            cfg.hidden.clear();
            for (const std::string& tok : split_list(hidden)) {
                try {
                    cfg.hidden.push_back(std::stoll(tok));
                } catch (const std::exception&) {
                    throw ConfigError("bad layer size '" + tok + "' in --hidden");
                }
            }
        }
        if (o_embedding->count()) cfg.embedding = embedding;
        if (o_lr->count()) {
            cfg.train.eta_theta = lr;
            cfg.train.eta_phi = lr;
        }
        if (o_epochs->count()) cfg.train.local_epochs = epochs;
        if (o_batch->count()) cfg.train.batch_size = batch;
        if (o_lambda->count()) cfg.train.lambda = lambda;
        if (o_ratio->count()) cfg.synthetic_ratio = ratio;
        if (o_tau0->count()) cfg.tau0 = tau0;
        if (o_output->count()) cfg.output_dir = output;
        validate(cfg);
        return cfg;
    }
};

void write_combined_csv(const std::vector<ExperimentResult>& results, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "strategy,seed,rounds,final_mean_acc,best_mean_acc,final_tau\n";
    for (const ExperimentResult& res : results)
        for (const SeedSummary& row : res.rows) {
            char buf[192];
            std::snprintf(buf, sizeof(buf), "%s,%llu,%d,%.17g,%.17g,%d\n", row.strategy.c_str(),
                          static_cast<unsigned long long>(row.seed), row.rounds,
                          row.final_mean_acc, row.best_mean_acc, row.final_tau);
            out << buf;
        }
    if (!out) throw IoError("write to " + path + " failed");
}

int cmd_run(const Overrides& common, bool dry_run) {
    ExperimentConfig cfg = common.resolve();
    if (dry_run) {
        std::printf("%s\n", to_json(cfg).dump(2).c_str());
        return 0;
    }
    const ExperimentResult res = run_experiment(cfg);
    std::printf("summary: %s\n", res.csv_path.c_str());
    return 0;
}

int cmd_sweep(const Overrides& common, const std::string& alphas_csv, const std::string& sync_name,
              int tau) {
    ExperimentConfig cfg = common.resolve();
    const std::vector<Scalar> alphas = parse_alpha_list(alphas_csv);
    const HeadSync sync = head_sync_from_string(sync_name);
    const SweepResult sweep = fixed_alpha_sweep(alphas, sync, tau, cfg);
    const std::string path = cfg.output_dir + "/sweep_summary.csv";
    write_combined_csv(sweep.per_alpha, path);
    std::printf("\nalpha    mean final acc   std\n");
    for (std::size_t i = 0; i < sweep.alphas.size(); ++i)
        std::printf("%-8.2f %-16.4f %.4f\n", sweep.alphas[i], sweep.per_alpha[i].mean_final,
                    sweep.per_alpha[i].std_final);
    std::printf("summary: %s\n", path.c_str());
    return 0;
}

int cmd_ablate(const Overrides& common) {
    ExperimentConfig cfg = common.resolve();
    const std::vector<ExperimentResult> results = run_ablations(cfg);
    const std::string path = cfg.output_dir + "/ablation_summary.csv";
    write_combined_csv(results, path);
    std::printf("\nvariant                    mean final acc   std\n");
    for (const ExperimentResult& res : results)
        std::printf("%-26s %-16.4f %.4f\n", res.rows.front().strategy.c_str(), res.mean_final,
                    res.std_final);
    std::printf("summary: %s\n", path.c_str());
    return 0;
}

int cmd_labelwise(const Overrides& common, long long test_per_class) {
    ExperimentConfig cfg = common.resolve();
    const std::vector<LabelwiseRow> rows = labelwise_compare(cfg, test_per_class);
    std::filesystem::create_directories(cfg.output_dir);
    const std::string path = cfg.output_dir + "/labelwise.csv";
    write_labelwise_csv(rows, path);

    // Headline number: accuracy on labels the client never saw in training.
    std::map<std::string, std::pair<Scalar, int>> missing_acc;
    for (const LabelwiseRow& row : rows)
        if (row.missing_locally && std::isfinite(row.acc)) {
            missing_acc[row.strategy].first += row.acc;
            missing_acc[row.strategy].second += 1;
        }
    std::printf("\nstrategy                        mean acc on locally-missing labels\n");
    for (const auto& [name, agg] : missing_acc)
        std::printf("%-31s %.4f  (%d label slots)\n", name.c_str(),
                    agg.second ? agg.first / agg.second : 0.0, agg.second);
    std::printf("rows: %s\n", path.c_str());
    return 0;
}

int cmd_dump_data(const Overrides& common, std::uint64_t seed, std::string out_path) {
    ExperimentConfig cfg = common.resolve();
    const std::vector<ClientShard> shards = build_shards(cfg, seed);
    if (out_path.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        out_path = cfg.output_dir + "/shards_seed" + std::to_string(seed) + ".csv";
    }
    dump_shards(shards, out_path);
    std::printf("client  train  test  per-class train counts\n");
    for (const ClientShard& shard : shards) {
        std::printf("%-7d %-6lld %-5lld ", shard.client_id,
                    static_cast<long long>(shard.train.size()),
                    static_cast<long long>(shard.test.size()));
        for (Eigen::Index c : shard.counts) std::printf("%lld ", static_cast<long long>(c));
        std::printf("\n");
    }
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic federated-learning simulator with split-model personalization"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "fedsplit 1.0.0");

    Overrides run_common, sweep_common, ablate_common, label_common, dump_common;

    CLI::App* run = app.add_subcommand("run", "run one strategy over the configured seeds");
    run_common.attach(run);
    bool dry_run = false;
    run->add_flag("--dry-run", dry_run, "print the effective config as JSON and exit");

    CLI::App* sweep = app.add_subcommand("sweep-alpha", "rerun with fixed head-mixing weights");
    sweep_common.attach(sweep);
    std::string alphas_csv = "0,0.25,0.5,0.75,1";
    std::string sync_name = "every_round";
    int sweep_tau = 20;
    sweep->add_option("--alphas", alphas_csv, "comma-separated mixing weights");
    sweep->add_option("--sync", sync_name, "'every_round' or 'fixed_interval'");
    sweep->add_option("--tau", sweep_tau, "interval for fixed_interval sync");

    CLI::App* ablate = app.add_subcommand("ablate", "full method vs. its ablations");
    ablate_common.attach(ablate);

    CLI::App* labelwise =
        app.add_subcommand("labelwise", "per-label accuracy vs. a never-synced-heads control");
    label_common.attach(labelwise);
    long long test_per_class = 50;
    labelwise->add_option("--test-per-class", test_per_class,
                          "samples per class in the uniform test set");

    CLI::App* dump = app.add_subcommand("dump-data", "write the partitioned dataset as CSV");
    dump_common.attach(dump);
    std::uint64_t dump_seed = 1;
    std::string dump_out;
    dump->add_option("--seed", dump_seed, "master seed for generation and partitioning");
    dump->add_option("--out", dump_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run->parsed()) return cmd_run(run_common, dry_run);
        if (sweep->parsed()) return cmd_sweep(sweep_common, alphas_csv, sync_name, sweep_tau);
        if (ablate->parsed()) return cmd_ablate(ablate_common);
        if (labelwise->parsed()) return cmd_labelwise(label_common, test_per_class);
        if (dump->parsed()) return cmd_dump_data(dump_common, dump_seed, dump_out);
    } catch (const fedsplit::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const fedsplit::ParameterError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
