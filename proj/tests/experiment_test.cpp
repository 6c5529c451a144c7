#include <doctest.h>

#include "fedsplit/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace fedsplit;
namespace fs = std::filesystem;

namespace {

// Desk-sized configuration: finishes in milliseconds, still exercises every
// phase of the pipeline.
ExperimentConfig tiny_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.classes = 3;
    cfg.dim = 4;
    cfg.per_class = 12;
    cfg.separation = 2.5;
    cfg.clients = 2;
    cfg.rounds = 2;
    cfg.hidden = {6};
    cfg.embedding = 3;
    cfg.train.batch_size = 8;
    cfg.train.local_epochs = 1;
    cfg.dirichlet_beta = 0.5;
    cfg.strategy = strategy_preset("pgfedsplit");
    cfg.seeds = {1};
    cfg.output_dir = out_dir;
    return cfg;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::path("tmp_exp") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("configs survive a JSON round trip, optional fields included") {
    ExperimentConfig cfg = tiny_config("out");
    cfg.data_seed = 99;
    cfg.partition_kind = "pathological";
    cfg.classes_per_client = 2;
    cfg.strategy.fixed_alpha = 0.25;
    cfg.strategy.finetune_epochs = 3;
    cfg.strategy.head_sync = HeadSync::every_round;
    cfg.label_smoothing = 0.2;
    cfg.normalize_gamma = true;
    cfg.head_weighting = HeadWeighting::uniform;
    cfg.seeds = {4, 5};

    const ExperimentConfig back = config_from_json(to_json(cfg));
    CHECK(back == cfg);

    // And the defaults round-trip too (optionals stay empty).
    ExperimentConfig defaults;
    const ExperimentConfig back2 = config_from_json(to_json(defaults));
    CHECK(back2 == defaults);
    CHECK_FALSE(back2.data_seed.has_value());
    CHECK_FALSE(back2.strategy.fixed_alpha.has_value());
}

TEST_CASE("config files round trip through disk") {
    TmpDir dir("cfg_io");
    ExperimentConfig cfg = tiny_config("out");
    cfg.seeds = {7};
    const std::string path = (dir.path / "config.json").string();
    save_config(cfg, path);
    CHECK(load_config(path) == cfg);
    CHECK_THROWS_AS(load_config((dir.path / "absent.json").string()), IoError);
}

TEST_CASE("validation names the offending field") {
    auto expect_mentions = [](ExperimentConfig cfg, const std::string& needle) {
        try {
            validate(cfg);
            FAIL_CHECK("expected rejection mentioning '" << needle << "'");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    ExperimentConfig cfg = tiny_config("out");

    cfg.classes = 1;
    expect_mentions(cfg, "data.classes");
    cfg = tiny_config("out");
    cfg.participation = 0.0;
    expect_mentions(cfg, "federation.participation");
    cfg = tiny_config("out");
    cfg.rounds = -1;
    expect_mentions(cfg, "federation.rounds");
    cfg = tiny_config("out");
    cfg.hidden = {8, 0};
    expect_mentions(cfg, "model.hidden");
    cfg = tiny_config("out");
    cfg.synthetic_ratio = 1.0;  // open interval
    expect_mentions(cfg, "mix.r");
    cfg = tiny_config("out");
    cfg.label_smoothing = 1.5;
    expect_mentions(cfg, "mix.label_smoothing");
    cfg = tiny_config("out");
    cfg.tau0 = 60;  // above tau_max
    expect_mentions(cfg, "apa");
    cfg = tiny_config("out");
    cfg.seeds.clear();
    expect_mentions(cfg, "seeds");
    cfg = tiny_config("out");
    cfg.partition_kind = "zipf";
    expect_mentions(cfg, "partition.kind");
    cfg = tiny_config("out");
    cfg.train.batch_size = 0;
    expect_mentions(cfg, "train");
}

TEST_CASE("unknown and malformed JSON keys are rejected") {
    ordered_json j = to_json(tiny_config("out"));
    j["surprise"] = 1;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    ordered_json j2 = to_json(tiny_config("out"));
    j2["data"]["blobs"] = 3;
    try {
        config_from_json(j2);
        FAIL_CHECK("unknown nested key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("data.blobs") != std::string::npos);
    }

    ordered_json j3 = to_json(tiny_config("out"));
    j3["federation"]["clients"] = "many";
    try {
        config_from_json(j3);
        FAIL_CHECK("non-numeric client count accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("malformed") != std::string::npos);
    }
}

TEST_CASE("strategy JSON loads the preset first, then applies overrides") {
    ordered_json j = to_json(tiny_config("out"));
    j["strategy"] = ordered_json{{"name", "pgfedsplit"}, {"fixed_alpha", 0.5}};
    const ExperimentConfig cfg = config_from_json(j);
    CHECK(cfg.strategy.use_gaussian_synth);  // from the preset
    CHECK(cfg.strategy.head_sync == HeadSync::apa);
    REQUIRE(cfg.strategy.fixed_alpha.has_value());
    CHECK(*cfg.strategy.fixed_alpha == 0.5);  // the override
}

TEST_CASE("shards derive from the data seed, not the run seed, when one is set") {
    ExperimentConfig cfg = tiny_config("out");
    cfg.data_seed = 42;
    const auto a = build_shards(cfg, 1);
    const auto b = build_shards(cfg, 2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].train.x == b[i].train.x);
        CHECK(a[i].train.y == b[i].train.y);
    }
    cfg.data_seed.reset();
    const auto c = build_shards(cfg, 1);
    const auto d = build_shards(cfg, 2);
    bool differ = false;
    for (std::size_t i = 0; i < c.size() && !differ; ++i)
        differ = c[i].train.x.size() != d[i].train.x.size() || c[i].train.x != d[i].train.x;
    CHECK(differ);
}

TEST_CASE("all clients start from one shared initial model") {
    ExperimentConfig cfg = tiny_config("out");
    cfg.clients = 4;
    ServerState server;
    std::vector<ClientState> clients;
    init_federation(cfg, 3, server, clients);
    REQUIRE(clients.size() == 4);
    for (const ClientState& c : clients) {
        CHECK(c.model.phi.W == clients[0].model.phi.W);
        CHECK(c.model.theta[0].W == server.theta_bar[0].W);
        CHECK(c.adaptation.t_last == -1);
    }
    CHECK(server.theta_bar.size() == 2);  // hidden layer + embedding layer
    CHECK(server.apa.tau == cfg.tau0);
}

TEST_CASE("a zero-round run still evaluates the initial models") {
    ExperimentConfig cfg = tiny_config("out");
    cfg.rounds = 0;
    const RunResult r = run_strategy(cfg.strategy, cfg, 1);
    REQUIRE(r.logs.size() == 1);
    CHECK(r.logs[0].round == 0);
    CHECK_FALSE(std::isnan(r.logs[0].mean_acc));
}

TEST_CASE("run logs count rounds from one after the initial evaluation") {
    ExperimentConfig cfg = tiny_config("out");
    cfg.rounds = 3;
    const RunResult r = run_strategy(cfg.strategy, cfg, 1);
    REQUIRE(r.logs.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(r.logs[static_cast<std::size_t>(i)].round == i);
}

TEST_CASE("fine-tuning strategies append one flagged extra record") {
    ExperimentConfig cfg = tiny_config("out");
    cfg.rounds = 2;
    cfg.strategy = strategy_preset("fedavg_ft");
    cfg.strategy.finetune_epochs = 1;
    const RunResult r = run_strategy(cfg.strategy, cfg, 1);
    REQUIRE(r.logs.size() == 4);  // rounds 0..2 plus the fine-tuned evaluation
    CHECK(r.logs.back().finetuned);
    CHECK(r.logs.back().round == 2);
    CHECK_FALSE(r.logs[2].finetuned);
}

TEST_CASE("experiments write one JSONL per seed and a stable summary CSV") {
    TmpDir dir("rune2e");
    ExperimentConfig cfg = tiny_config((dir.path / "out").string());
    cfg.seeds = {1, 2};
    const ExperimentResult res = run_experiment(cfg);

    REQUIRE(res.jsonl_paths.size() == 2);
    CHECK(fs::path(res.jsonl_paths[0]).filename().string() == "pgfedsplit_seed1.jsonl");
    CHECK(fs::path(res.jsonl_paths[1]).filename().string() == "pgfedsplit_seed2.jsonl");
    for (const std::string& p : res.jsonl_paths)
        CHECK(read_lines(p).size() == 3);  // initial evaluation + 2 rounds

    const auto csv = read_lines(res.csv_path);
    REQUIRE(csv.size() == 3);
    CHECK(csv[0] == "strategy,seed,rounds,final_mean_acc,best_mean_acc,final_tau");
    CHECK(csv[1].rfind("pgfedsplit,1,2,", 0) == 0);

    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].seed == 1);
    CHECK(res.rows[0].best_mean_acc >= res.rows[0].final_mean_acc - 1e-15);
    CHECK(res.mean_final ==
          doctest::Approx(0.5 * (res.rows[0].final_mean_acc + res.rows[1].final_mean_acc)));

    // Byte-identical on rerun: the determinism contract for the file layer.
    const std::string first = read_all(res.jsonl_paths[0]);
    const ExperimentResult res2 = run_experiment(cfg);
    CHECK(read_all(res2.jsonl_paths[0]) == first);
}

TEST_CASE("metric records carry alpha fields only when heads were delivered") {
    TmpDir dir("jsonl");
    ExperimentConfig cfg = tiny_config((dir.path / "out").string());
    cfg.rounds = 3;
    cfg.tau0 = 1;
    cfg.tau_min = 1;
    cfg.tau_max = 1;
    cfg.strategy.head_sync = HeadSync::fixed_interval;
    cfg.strategy.fixed_interval_tau = 1;
    const ExperimentResult res = run_experiment(cfg);
    const auto lines = read_lines(res.jsonl_paths[0]);
    REQUIRE(lines.size() == 4);

    const ordered_json r0 = ordered_json::parse(lines[0]);
    CHECK(r0["round"] == 0);
    CHECK_FALSE(r0.contains("alpha_mean"));
    CHECK_FALSE(r0.contains("alphas"));
    CHECK(r0["head_delivered"] == false);
    CHECK(r0["per_client_acc"].size() == 2);

    const ordered_json r1 = ordered_json::parse(lines[1]);
    CHECK(r1["round"] == 1);
    CHECK(r1["head_aggregated"] == true);  // interval 1 triggers immediately
    CHECK(r1["head_delivered"] == false);  // nothing stashed before round 1

    const ordered_json r2 = ordered_json::parse(lines[2]);
    CHECK(r2["head_delivered"] == true);
    CHECK(r2.contains("alpha_mean"));
    CHECK(r2.contains("alphas"));
    CHECK(r2["alphas"].size() == r2["deltas"].size());
    CHECK(r2["tau"] == 1);
}

TEST_CASE("interval bookkeeping follows the sync mode") {
    TmpDir dir("apamode");
    ExperimentConfig cfg = tiny_config((dir.path / "out").string());
    cfg.rounds = 1;
    cfg.tau0 = 7;

    // every_round pins the interval to 1 regardless of tau0
    cfg.strategy.head_sync = HeadSync::every_round;
    CHECK(run_strategy(cfg.strategy, cfg, 1).logs.back().tau == 1);

    // fixed_interval pins it to the strategy's tau
    cfg.strategy.head_sync = HeadSync::fixed_interval;
    cfg.strategy.fixed_interval_tau = 4;
    CHECK(run_strategy(cfg.strategy, cfg, 1).logs.back().tau == 4);

    // the adaptive mode starts from tau0
    cfg.strategy = strategy_preset("pgfedsplit");
    CHECK(run_strategy(cfg.strategy, cfg, 1).logs.back().tau == 7);
}

TEST_CASE("labelwise comparison flags locally-missing labels per client") {
    TmpDir dir("labelwise");
    ExperimentConfig cfg = tiny_config((dir.path / "out").string());
    cfg.rounds = 1;
    cfg.partition_kind = "pathological";
    cfg.classes_per_client = 2;  // 2 clients x 2 classes over 3 classes: gaps guaranteed
    const auto rows = labelwise_compare(cfg, 10);

    // Two strategies (method + never-sync control), 1 seed, 2 clients, 3 labels.
    CHECK(rows.size() == 2 * 1 * 2 * 3);
    const auto shards = build_shards(cfg, cfg.seeds[0]);
    int missing = 0;
    for (const auto& row : rows) {
        CHECK((row.strategy == "pgfedsplit" || row.strategy == "pgfedsplit_head_never"));
        const bool expect_missing =
            shards[static_cast<std::size_t>(row.client)].counts[row.label] == 0;
        CHECK(row.missing_locally == expect_missing);
        missing += row.missing_locally ? 1 : 0;
        CHECK_FALSE(std::isnan(row.acc));  // uniform test set covers every label
    }
    CHECK(missing >= 2);  // each client misses at least one of the 3 classes

    const std::string csv_path = (dir.path / "labelwise.csv").string();
    write_labelwise_csv(rows, csv_path);
    const auto lines = read_lines(csv_path);
    CHECK(lines[0] == "strategy,seed,client,label,accuracy,missing_locally");
    CHECK(lines.size() == rows.size() + 1);
}

TEST_CASE("across-seed deviation uses the sample convention") {
    CHECK(sample_std({1.0, 3.0}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(sample_std({2.0, 2.0, 2.0}) == doctest::Approx(0.0));
    CHECK(sample_std({5.0}) == 0.0);
    CHECK(sample_std({}) == 0.0);
}

TEST_CASE("checkpoints written by the harness resume bit-identically") {
    TmpDir dir("ckpt");
    ExperimentConfig cfg = tiny_config((dir.path / "out").string());
    cfg.rounds = 4;
    const std::string ckpt_dir = (dir.path / "ckpts").string();
    const RunResult full = run_strategy(cfg.strategy, cfg, 1, nullptr, ckpt_dir);
    REQUIRE(fs::exists(fs::path(ckpt_dir) / "round_2.ckpt"));

    // Resume by hand from round 2 and replay rounds 3..4.
    ServerState server;
    std::vector<ClientState> clients;
    load_checkpoint((fs::path(ckpt_dir) / "round_2.ckpt").string(), server, clients);
    const auto shards = build_shards(cfg, 1);
    std::vector<RoundLog> tail;
    for (int t = 2; t < 4; ++t)
        tail.push_back(server_round(server, clients, shards, cfg.strategy, cfg.train, 1,
                                    cfg.participation, cfg.synthetic_ratio, cfg.label_smoothing,
                                    cfg.normalize_gamma, cfg.head_weighting));
    auto same_accs = [](const Vector& a, const Vector& b) {
        if (a.size() != b.size()) return false;
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            if (std::isnan(a(i)) != std::isnan(b(i))) return false;
            if (!std::isnan(a(i)) && a(i) != b(i)) return false;
        }
        return true;
    };
    CHECK(same_accs(tail[0].per_client_acc, full.logs[3].per_client_acc));
    CHECK(same_accs(tail[1].per_client_acc, full.logs[4].per_client_acc));
    CHECK(tail[1].tau == full.logs[4].tau);
}

}  // TEST_SUITE
