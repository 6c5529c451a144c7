#include "fedsplit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>

namespace fedsplit {

namespace {

std::string fmt_g17(Scalar v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string alpha_tag(Scalar alpha) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", alpha);
    return buf;
}

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
}

void check_known_keys(const ordered_json& j, const std::string& section,
                      std::initializer_list<const char*> known) {
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(known.begin(), known.end(),
                         [&](const char* k) { return key == k; }) == known.end())
            throw ConfigError("unknown config key '" +
                              (section.empty() ? key : section + "." + key) + "'");
    }
}

ApaState make_apa_state(const ExperimentConfig& cfg) {
    ApaState apa;
    switch (cfg.strategy.head_sync) {
        case HeadSync::apa:
        case HeadSync::never:
            apa.tau = cfg.tau0;
            apa.tau_min = cfg.tau_min;
            apa.tau_max = cfg.tau_max;
            break;
        case HeadSync::every_round:
            apa.tau = apa.tau_min = apa.tau_max = 1;
            break;
        case HeadSync::fixed_interval:
            apa.tau = apa.tau_min = apa.tau_max = cfg.strategy.fixed_interval_tau;
            break;
    }
    return apa;
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
    if (cfg.schema_version != 1) bad_field("schema_version", "only version 1 is understood");
    if (cfg.classes < 2) bad_field("data.classes", "need at least 2 classes");
    if (cfg.dim < 1) bad_field("data.dim", "must be positive");
    if (cfg.per_class < 1) bad_field("data.per_class", "must be positive");
    if (cfg.separation < 0.0) bad_field("data.separation", "must be nonnegative");
    if (cfg.partition_kind != "dirichlet" && cfg.partition_kind != "pathological")
        bad_field("partition.kind", "must be 'dirichlet' or 'pathological'");
    if (cfg.partition_kind == "dirichlet" && cfg.dirichlet_beta <= 0.0)
        bad_field("partition.beta", "must be positive");
    if (cfg.partition_kind == "pathological" &&
        (cfg.classes_per_client < 1 || cfg.classes_per_client > cfg.classes))
        bad_field("partition.classes_per_client", "must lie in [1, classes]");
    if (cfg.clients < 1) bad_field("federation.clients", "must be positive");
    if (!(cfg.participation > 0.0 && cfg.participation <= 1.0))
        bad_field("federation.participation", "must lie in (0, 1]");
    if (cfg.rounds < 0) bad_field("federation.rounds", "must be nonnegative");
    if (cfg.hidden.empty()) bad_field("model.hidden", "need at least one hidden layer size");
    for (Eigen::Index h : cfg.hidden)
        if (h < 1) bad_field("model.hidden", "sizes must be positive");
    if (cfg.embedding < 1) bad_field("model.embedding", "must be positive");
    try {
        validate_strict(cfg.train);
    } catch (const ParameterError& e) {
        bad_field("train", e.what());
    }
    if (!(cfg.synthetic_ratio > 0.0 && cfg.synthetic_ratio < 1.0))
        bad_field("mix.r", "must lie strictly between 0 and 1");
    if (cfg.label_smoothing < 0.0 || cfg.label_smoothing > 1.0)
        bad_field("mix.label_smoothing", "must lie in [0, 1]");
    if (cfg.tau_min < 1) bad_field("apa.tau_min", "must be at least 1");
    if (cfg.tau_max < cfg.tau_min) bad_field("apa.tau_max", "must be >= tau_min");
    if (cfg.tau0 < cfg.tau_min || cfg.tau0 > cfg.tau_max)
        bad_field("apa.tau0", "must lie in [tau_min, tau_max]");
    try {
        fedsplit::validate(cfg.strategy);
    } catch (const ParameterError& e) {
        bad_field("strategy", e.what());
    }
    if (cfg.seeds.empty()) bad_field("seeds", "need at least one seed");
    if (cfg.output_dir.empty()) bad_field("output_dir", "must not be empty");
}

ordered_json to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["schema_version"] = cfg.schema_version;
    ordered_json data;
    data["classes"] = cfg.classes;
    data["dim"] = cfg.dim;
    data["per_class"] = cfg.per_class;
    data["separation"] = cfg.separation;
    if (cfg.data_seed) data["seed"] = *cfg.data_seed;
    else data["seed"] = nullptr;
    j["data"] = data;
    ordered_json part;
    part["kind"] = cfg.partition_kind;
    part["beta"] = cfg.dirichlet_beta;
    part["classes_per_client"] = cfg.classes_per_client;
    j["partition"] = part;
    ordered_json fed;
    fed["clients"] = cfg.clients;
    fed["participation"] = cfg.participation;
    fed["rounds"] = cfg.rounds;
    j["federation"] = fed;
    ordered_json model;
    model["hidden"] = cfg.hidden;
    model["embedding"] = cfg.embedding;
    j["model"] = model;
    ordered_json train;
    train["eta_theta"] = cfg.train.eta_theta;
    train["eta_phi"] = cfg.train.eta_phi;
    train["batch"] = cfg.train.batch_size;
    train["epochs"] = cfg.train.local_epochs;
    train["lambda"] = cfg.train.lambda;
    train["t_kd"] = cfg.train.t_kd;
    train["beta_reg"] = cfg.train.beta_reg;
    j["train"] = train;
    ordered_json mix;
    mix["r"] = cfg.synthetic_ratio;
    mix["label_smoothing"] = cfg.label_smoothing;
    mix["normalize_gamma"] = cfg.normalize_gamma;
    j["mix"] = mix;
    ordered_json apa;
    apa["tau0"] = cfg.tau0;
    apa["tau_min"] = cfg.tau_min;
    apa["tau_max"] = cfg.tau_max;
    j["apa"] = apa;
    j["head_weighting"] = to_string(cfg.head_weighting);
    ordered_json strat;
    strat["name"] = cfg.strategy.name;
    strat["head_sync"] = to_string(cfg.strategy.head_sync);
    strat["fixed_interval_tau"] = cfg.strategy.fixed_interval_tau;
    strat["use_gaussian_synth"] = cfg.strategy.use_gaussian_synth;
    strat["use_prototype_reg"] = cfg.strategy.use_prototype_reg;
    strat["share_repr"] = cfg.strategy.share_repr;
    strat["share_head"] = cfg.strategy.share_head;
    strat["local_update"] = to_string(cfg.strategy.local_update);
    if (cfg.strategy.fixed_alpha) strat["fixed_alpha"] = *cfg.strategy.fixed_alpha;
    else strat["fixed_alpha"] = nullptr;
    if (cfg.strategy.finetune_epochs) strat["finetune_epochs"] = *cfg.strategy.finetune_epochs;
    else strat["finetune_epochs"] = nullptr;
    j["strategy"] = strat;
    j["seeds"] = cfg.seeds;
    j["output_dir"] = cfg.output_dir;
    return j;
}

ExperimentConfig config_from_json(const ordered_json& j) {
    ExperimentConfig cfg;
    check_known_keys(j, "",
                     {"schema_version", "data", "partition", "federation", "model", "train", "mix",
                      "apa", "head_weighting", "strategy", "seeds", "output_dir"});
    try {
        if (j.contains("schema_version")) cfg.schema_version = j.at("schema_version").get<int>();
        if (j.contains("data")) {
            const auto& d = j.at("data");
            check_known_keys(d, "data", {"classes", "dim", "per_class", "separation", "seed"});
            if (d.contains("classes")) cfg.classes = d.at("classes").get<int>();
            if (d.contains("dim")) cfg.dim = d.at("dim").get<Eigen::Index>();
            if (d.contains("per_class")) cfg.per_class = d.at("per_class").get<Eigen::Index>();
            if (d.contains("separation")) cfg.separation = d.at("separation").get<Scalar>();
            if (d.contains("seed") && !d.at("seed").is_null())
                cfg.data_seed = d.at("seed").get<std::uint64_t>();
        }
        if (j.contains("partition")) {
            const auto& p = j.at("partition");
            check_known_keys(p, "partition", {"kind", "beta", "classes_per_client"});
            if (p.contains("kind")) cfg.partition_kind = p.at("kind").get<std::string>();
            if (p.contains("beta")) cfg.dirichlet_beta = p.at("beta").get<Scalar>();
            if (p.contains("classes_per_client"))
                cfg.classes_per_client = p.at("classes_per_client").get<int>();
        }
        if (j.contains("federation")) {
            const auto& f = j.at("federation");
            check_known_keys(f, "federation", {"clients", "participation", "rounds"});
            if (f.contains("clients")) cfg.clients = f.at("clients").get<int>();
            if (f.contains("participation")) cfg.participation = f.at("participation").get<Scalar>();
            if (f.contains("rounds")) cfg.rounds = f.at("rounds").get<int>();
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            check_known_keys(m, "model", {"hidden", "embedding"});
            if (m.contains("hidden")) cfg.hidden = m.at("hidden").get<std::vector<Eigen::Index>>();
            if (m.contains("embedding")) cfg.embedding = m.at("embedding").get<Eigen::Index>();
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            check_known_keys(t, "train",
                             {"eta_theta", "eta_phi", "batch", "epochs", "lambda", "t_kd",
                              "beta_reg"});
            if (t.contains("eta_theta")) cfg.train.eta_theta = t.at("eta_theta").get<Scalar>();
            if (t.contains("eta_phi")) cfg.train.eta_phi = t.at("eta_phi").get<Scalar>();
            if (t.contains("batch")) cfg.train.batch_size = t.at("batch").get<Eigen::Index>();
            if (t.contains("epochs")) cfg.train.local_epochs = t.at("epochs").get<int>();
            if (t.contains("lambda")) cfg.train.lambda = t.at("lambda").get<Scalar>();
            if (t.contains("t_kd")) cfg.train.t_kd = t.at("t_kd").get<Scalar>();
            if (t.contains("beta_reg")) cfg.train.beta_reg = t.at("beta_reg").get<Scalar>();
        }
        if (j.contains("mix")) {
            const auto& m = j.at("mix");
            check_known_keys(m, "mix", {"r", "label_smoothing", "normalize_gamma"});
            if (m.contains("r")) cfg.synthetic_ratio = m.at("r").get<Scalar>();
            if (m.contains("label_smoothing"))
                cfg.label_smoothing = m.at("label_smoothing").get<Scalar>();
            if (m.contains("normalize_gamma"))
                cfg.normalize_gamma = m.at("normalize_gamma").get<bool>();
        }
        if (j.contains("apa")) {
            const auto& a = j.at("apa");
            check_known_keys(a, "apa", {"tau0", "tau_min", "tau_max"});
            if (a.contains("tau0")) cfg.tau0 = a.at("tau0").get<int>();
            if (a.contains("tau_min")) cfg.tau_min = a.at("tau_min").get<int>();
            if (a.contains("tau_max")) cfg.tau_max = a.at("tau_max").get<int>();
        }
        if (j.contains("head_weighting"))
            cfg.head_weighting = head_weighting_from_string(j.at("head_weighting").get<std::string>());
        if (j.contains("strategy")) {
            const auto& s = j.at("strategy");
            check_known_keys(s, "strategy",
                             {"name", "head_sync", "fixed_interval_tau", "use_gaussian_synth",
                              "use_prototype_reg", "share_repr", "share_head", "local_update",
                              "fixed_alpha", "finetune_epochs"});
            if (s.contains("name")) cfg.strategy = strategy_preset(s.at("name").get<std::string>());
            if (s.contains("head_sync"))
                cfg.strategy.head_sync = head_sync_from_string(s.at("head_sync").get<std::string>());
            if (s.contains("fixed_interval_tau"))
                cfg.strategy.fixed_interval_tau = s.at("fixed_interval_tau").get<int>();
            if (s.contains("use_gaussian_synth"))
                cfg.strategy.use_gaussian_synth = s.at("use_gaussian_synth").get<bool>();
            if (s.contains("use_prototype_reg"))
                cfg.strategy.use_prototype_reg = s.at("use_prototype_reg").get<bool>();
            if (s.contains("share_repr")) cfg.strategy.share_repr = s.at("share_repr").get<bool>();
            if (s.contains("share_head")) cfg.strategy.share_head = s.at("share_head").get<bool>();
            if (s.contains("local_update"))
                cfg.strategy.local_update =
                    local_update_from_string(s.at("local_update").get<std::string>());
            if (s.contains("fixed_alpha") && !s.at("fixed_alpha").is_null())
                cfg.strategy.fixed_alpha = s.at("fixed_alpha").get<Scalar>();
            if (s.contains("finetune_epochs") && !s.at("finetune_epochs").is_null())
                cfg.strategy.finetune_epochs = s.at("finetune_epochs").get<int>();
        }
        if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config value: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << to_json(cfg).dump(2) << '\n';
    if (!out) throw IoError("write to " + path + " failed");
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    const auto& ta = a.train;
    const auto& tb = b.train;
    return a.schema_version == b.schema_version && a.classes == b.classes && a.dim == b.dim &&
           a.per_class == b.per_class && a.separation == b.separation &&
           a.data_seed == b.data_seed && a.partition_kind == b.partition_kind &&
           a.dirichlet_beta == b.dirichlet_beta && a.classes_per_client == b.classes_per_client &&
           a.clients == b.clients && a.participation == b.participation && a.rounds == b.rounds &&
           a.hidden == b.hidden && a.embedding == b.embedding &&
           ta.eta_theta == tb.eta_theta && ta.eta_phi == tb.eta_phi &&
           ta.batch_size == tb.batch_size && ta.local_epochs == tb.local_epochs &&
           ta.lambda == tb.lambda && ta.t_kd == tb.t_kd && ta.beta_reg == tb.beta_reg &&
           a.synthetic_ratio == b.synthetic_ratio && a.label_smoothing == b.label_smoothing &&
           a.normalize_gamma == b.normalize_gamma && a.tau0 == b.tau0 && a.tau_min == b.tau_min &&
           a.tau_max == b.tau_max && a.head_weighting == b.head_weighting &&
           a.strategy == b.strategy && a.seeds == b.seeds && a.output_dir == b.output_dir;
}

ordered_json round_log_to_json(const RoundLog& log) {
    ordered_json j;
    j["round"] = log.round;
    j["mean_acc"] = log.mean_acc;
    ordered_json accs = ordered_json::array();
    for (Eigen::Index i = 0; i < log.per_client_acc.size(); ++i)
        accs.push_back(log.per_client_acc(i));
    j["per_client_acc"] = accs;
    j["tau"] = log.tau;
    j["s"] = log.s;
    j["participants"] = log.participants;
    j["head_delivered"] = log.head_delivered;
    j["head_aggregated"] = log.head_aggregated;
    if (log.alpha_mean) j["alpha_mean"] = *log.alpha_mean;
    if (!log.alphas.empty()) {
        ordered_json a, d;
        for (const auto& [id, alpha] : log.alphas) a[std::to_string(id)] = alpha;
        for (const auto& [id, delta] : log.deltas) d[std::to_string(id)] = delta;
        j["alphas"] = a;
        j["deltas"] = d;
    }
    if (log.finetuned) j["finetuned"] = true;
    return j;
}

std::vector<ClientShard> build_shards(const ExperimentConfig& cfg, std::uint64_t master_seed) {
    const std::uint64_t data_seed = cfg.data_seed.value_or(master_seed);
    const LabeledDataset ds =
        generate_gaussian_mixture(cfg.classes, cfg.dim, cfg.per_class, cfg.separation, data_seed);
    if (cfg.partition_kind == "dirichlet")
        return dirichlet_partition(ds, cfg.clients, cfg.dirichlet_beta, data_seed);
    return pathological_partition(ds, cfg.clients, cfg.classes_per_client, data_seed);
}

void init_federation(const ExperimentConfig& cfg, std::uint64_t master_seed, ServerState& server,
                     std::vector<ClientState>& clients) {
    std::vector<Eigen::Index> dims;
    dims.push_back(cfg.dim);
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(cfg.embedding);
    std::mt19937_64 rng_theta = substream(master_seed, Stream::init_repr);
    std::mt19937_64 rng_phi = substream(master_seed, Stream::init_head);
    const LayerStack theta0 = he_init(dims, rng_theta);
    const Layer phi0 = he_init({cfg.embedding, static_cast<Eigen::Index>(cfg.classes)}, rng_phi)[0];

    server = ServerState{};
    server.theta_bar = theta0;
    server.apa = make_apa_state(cfg);

    clients.clear();
    clients.reserve(static_cast<std::size_t>(cfg.clients));
    for (int i = 0; i < cfg.clients; ++i) {
        ClientState c;
        c.client_id = i;
        c.model.theta = theta0;
        c.model.phi = phi0;
        clients.push_back(std::move(c));
    }
}

RunResult run_strategy(const StrategySpec& spec, const ExperimentConfig& cfg_in,
                       std::uint64_t master_seed, std::vector<std::string>* trace,
                       const std::string& checkpoint_dir) {
    ExperimentConfig cfg = cfg_in;
    cfg.strategy = spec;
    validate(cfg);

    RunResult rr;
    rr.shards = build_shards(cfg, master_seed);
    init_federation(cfg, master_seed, rr.server, rr.clients);
    if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

    const EvalResult initial = evaluate(rr.clients, rr.shards);
    RoundLog first;
    first.round = 0;
    first.per_client_acc = initial.per_client;
    first.mean_acc = initial.mean;
    first.tau = rr.server.apa.tau;
    first.s = rr.server.apa.s;
    rr.logs.push_back(std::move(first));

    for (int t = 0; t < cfg.rounds; ++t) {
        RoundLog rl = server_round(rr.server, rr.clients, rr.shards, cfg.strategy, cfg.train,
                                   master_seed, cfg.participation, cfg.synthetic_ratio,
                                   cfg.label_smoothing, cfg.normalize_gamma, cfg.head_weighting,
                                   trace);
        rl.round = t + 1;  // metrics count rounds from 1; record 0 is the initial evaluation
        rr.logs.push_back(std::move(rl));
        if (!checkpoint_dir.empty())
            save_checkpoint(rr.server, rr.clients,
                            checkpoint_dir + "/round_" + std::to_string(t + 1) + ".ckpt");
    }

    if (spec.finetune_epochs) {
        finetune_clients(rr.clients, rr.shards, cfg.train, *spec.finetune_epochs, master_seed);
        const EvalResult post = evaluate(rr.clients, rr.shards);
        RoundLog ft;
        ft.round = cfg.rounds;
        ft.per_client_acc = post.per_client;
        ft.mean_acc = post.mean;
        ft.tau = rr.server.apa.tau;
        ft.s = rr.server.apa.s;
        ft.finetuned = true;
        rr.logs.push_back(std::move(ft));
    }
    return rr;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    std::filesystem::create_directories(cfg.output_dir);

    ExperimentResult result;
    std::vector<Scalar> finals;
    for (std::uint64_t seed : cfg.seeds) {
        const RunResult rr = run_strategy(cfg.strategy, cfg, seed);

        const std::string jsonl_path =
            cfg.output_dir + "/" + cfg.strategy.name + "_seed" + std::to_string(seed) + ".jsonl";
        std::ofstream out(jsonl_path, std::ios::trunc);
        if (!out) throw IoError("cannot open " + jsonl_path + " for writing");
        Scalar wall = 0.0;
        for (const RoundLog& rl : rr.logs) {
            out << round_log_to_json(rl).dump() << '\n';
            wall += rl.wall_seconds;
        }
        if (!out) throw IoError("write to " + jsonl_path + " failed");
        result.jsonl_paths.push_back(jsonl_path);

        SeedSummary row;
        row.strategy = cfg.strategy.name;
        row.seed = seed;
        row.rounds = cfg.rounds;
        row.final_mean_acc = rr.logs.back().mean_acc;
        row.best_mean_acc = rr.logs.front().mean_acc;
        for (const RoundLog& rl : rr.logs) row.best_mean_acc = std::max(row.best_mean_acc, rl.mean_acc);
        row.final_tau = rr.logs.back().tau;
        result.rows.push_back(row);
        finals.push_back(row.final_mean_acc);
        std::printf("[%s seed %llu] %d rounds, final acc %.4f, best %.4f, tau %d (%.1fs)\n",
                    cfg.strategy.name.c_str(), static_cast<unsigned long long>(seed), cfg.rounds,
                    row.final_mean_acc, row.best_mean_acc, row.final_tau, wall);
        std::fflush(stdout);
    }

    result.mean_final =
        std::accumulate(finals.begin(), finals.end(), 0.0) / static_cast<Scalar>(finals.size());
    result.std_final = sample_std(finals);

    result.csv_path = cfg.output_dir + "/summary_" + cfg.strategy.name + ".csv";
    std::ofstream csv(result.csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open " + result.csv_path + " for writing");
    csv << "strategy,seed,rounds,final_mean_acc,best_mean_acc,final_tau\n";
    for (const SeedSummary& row : result.rows)
        csv << row.strategy << ',' << row.seed << ',' << row.rounds << ','
            << fmt_g17(row.final_mean_acc) << ',' << fmt_g17(row.best_mean_acc) << ','
            << row.final_tau << '\n';
    if (!csv) throw IoError("write to " + result.csv_path + " failed");

    std::printf("[%s] mean final acc %.4f +/- %.4f over %zu seeds\n", cfg.strategy.name.c_str(),
                result.mean_final, result.std_final, cfg.seeds.size());
    std::fflush(stdout);
    return result;
}

SweepResult fixed_alpha_sweep(const std::vector<Scalar>& alphas, HeadSync sync, int tau,
                              ExperimentConfig cfg) {
    if (alphas.empty()) throw ParameterError("alpha sweep needs at least one alpha");
    if (sync != HeadSync::every_round && sync != HeadSync::fixed_interval)
        throw ParameterError("alpha sweep requires an aggregating head-sync mode");
    SweepResult sweep;
    for (Scalar alpha : alphas) {
        if (alpha < 0.0 || alpha > 1.0) throw ParameterError("sweep alpha outside [0, 1]");
        StrategySpec spec = cfg.strategy;
        spec.head_sync = sync;
        spec.share_head = true;
        spec.fixed_alpha = alpha;
        spec.fixed_interval_tau = tau;
        spec.name = cfg.strategy.name + "_a" + alpha_tag(alpha) + "_" + to_string(sync) +
                    (sync == HeadSync::fixed_interval ? "_tau" + std::to_string(tau) : "");
        ExperimentConfig run_cfg = cfg;
        run_cfg.strategy = spec;
        sweep.alphas.push_back(alpha);
        sweep.per_alpha.push_back(run_experiment(run_cfg));
    }
    return sweep;
}

std::vector<ExperimentResult> run_ablations(ExperimentConfig cfg) {
    std::vector<ExperimentResult> out;
    for (const char* name :
         {"pgfedsplit", "pgfedsplit_no_apa", "pgfedsplit_no_gau", "pgfedsplit_no_apa_gau"}) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.strategy = strategy_preset(name);
        out.push_back(run_experiment(run_cfg));
    }
    return out;
}

std::vector<LabelwiseRow> labelwise_compare(ExperimentConfig cfg, Eigen::Index test_per_class) {
    if (test_per_class < 1) throw ParameterError("test_per_class must be positive");
    StrategySpec full = cfg.strategy;
    StrategySpec never = full;
    never.head_sync = HeadSync::never;
    never.share_head = false;
    never.fixed_alpha.reset();
    never.name = full.name + "_head_never";

    std::vector<LabelwiseRow> rows;
    for (std::uint64_t seed : cfg.seeds) {
        const std::uint64_t data_seed = cfg.data_seed.value_or(seed);
        const Matrix means = mixture_means(cfg.classes, cfg.dim, cfg.separation, data_seed);
        std::mt19937_64 rng = substream(data_seed, Stream::labelwise_data);
        const LabeledDataset uniform_test = sample_mixture(means, test_per_class, rng);

        for (const StrategySpec& spec : {full, never}) {
            const RunResult rr = run_strategy(spec, cfg, seed);
            for (std::size_t i = 0; i < rr.clients.size(); ++i) {
                const Vector acc = labelwise_accuracy(rr.clients[i], uniform_test);
                for (int l = 0; l < cfg.classes; ++l) {
                    LabelwiseRow row;
                    row.strategy = spec.name;
                    row.seed = seed;
                    row.client = static_cast<int>(i);
                    row.label = l;
                    row.acc = acc(l);
                    row.missing_locally = rr.shards[i].counts[static_cast<std::size_t>(l)] == 0;
                    rows.push_back(std::move(row));
                }
            }
        }
    }
    return rows;
}

void write_labelwise_csv(const std::vector<LabelwiseRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "strategy,seed,client,label,accuracy,missing_locally\n";
    for (const LabelwiseRow& r : rows)
        out << r.strategy << ',' << r.seed << ',' << r.client << ',' << r.label << ','
            << fmt_g17(r.acc) << ',' << (r.missing_locally ? 1 : 0) << '\n';
    if (!out) throw IoError("write to " + path + " failed");
}

Scalar sample_std(const std::vector<Scalar>& values) {
    if (values.size() < 2) return 0.0;
    const Scalar mean =
        std::accumulate(values.begin(), values.end(), 0.0) / static_cast<Scalar>(values.size());
    Scalar ss = 0.0;
    for (Scalar v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<Scalar>(values.size() - 1));
}

}  // namespace fedsplit
