#include <doctest.h>

#include "fedsplit/protocol.hpp"
#include "fedsplit/strategy.hpp"

#include <vector>

using namespace fedsplit;

namespace {

// Minimal federation for the behavioral-equivalence checks.
struct Sim {
    ServerState server;
    std::vector<ClientState> clients;
    std::vector<ClientShard> shards;
    TrainConfig cfg;
};

Sim make_sim(std::uint64_t seed, int tau, int tau_min, int tau_max) {
    Sim s;
    const LabeledDataset ds = generate_gaussian_mixture(4, 5, 20, 2.5, seed);
    s.shards = dirichlet_partition(ds, 3, 0.5, seed);
    std::mt19937_64 rt = substream(seed, Stream::init_repr);
    std::mt19937_64 rp = substream(seed, Stream::init_head);
    s.server.theta_bar = he_init({5, 8, 3}, rt);
    const Layer phi0 = he_init({3, 4}, rp)[0];
    s.server.apa.tau = tau;
    s.server.apa.tau_min = tau_min;
    s.server.apa.tau_max = tau_max;
    for (int i = 0; i < 3; ++i) {
        ClientState c;
        c.client_id = i;
        c.model.theta = s.server.theta_bar;
        c.model.phi = phi0;
        s.clients.push_back(std::move(c));
    }
    s.cfg.batch_size = 8;
    s.cfg.local_epochs = 1;
    return s;
}

// NaN-tolerant bitwise comparison: clients with empty test sets evaluate to
// NaN, which plain == would (correctly but unhelpfully) refuse to match.
bool same_accs(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) return false;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (std::isnan(a(i)) != std::isnan(b(i))) return false;
        if (!std::isnan(a(i)) && a(i) != b(i)) return false;
    }
    return true;
}

std::vector<RoundLog> drive(Sim& s, const StrategySpec& spec, int rounds) {
    std::vector<RoundLog> logs;
    for (int t = 0; t < rounds; ++t)
        logs.push_back(server_round(s.server, s.clients, s.shards, spec, s.cfg, 77, 1.0, 0.5, 0.0,
                                    false, HeadWeighting::data_size));
    return logs;
}

}  // namespace

TEST_SUITE("strategy") {

TEST_CASE("presets pin the expected sharing and training modes") {
    const StrategySpec local = strategy_preset("local");
    CHECK(local.head_sync == HeadSync::never);
    CHECK_FALSE(local.share_repr);
    CHECK_FALSE(local.share_head);
    CHECK_FALSE(local.use_gaussian_synth);
    CHECK_FALSE(local.use_prototype_reg);
    CHECK(local.local_update == LocalUpdate::joint);
    CHECK_FALSE(local.fixed_alpha.has_value());

    const StrategySpec fedavg = strategy_preset("fedavg");
    CHECK(fedavg.head_sync == HeadSync::every_round);
    CHECK(fedavg.share_repr);
    CHECK(fedavg.share_head);
    CHECK(fedavg.local_update == LocalUpdate::joint);
    REQUIRE(fedavg.fixed_alpha.has_value());
    CHECK(*fedavg.fixed_alpha == 0.0);  // adopt the aggregated head outright
    CHECK_FALSE(fedavg.finetune_epochs.has_value());

    const StrategySpec ft = strategy_preset("fedavg_ft");
    REQUIRE(ft.finetune_epochs.has_value());
    CHECK(*ft.finetune_epochs == 25);

    const StrategySpec fedper = strategy_preset("fedper");
    CHECK(fedper.share_repr);
    CHECK_FALSE(fedper.share_head);
    CHECK(fedper.head_sync == HeadSync::never);
    CHECK(fedper.local_update == LocalUpdate::joint);

    const StrategySpec fedrep = strategy_preset("fedrep");
    CHECK(fedrep.local_update == LocalUpdate::decoupled);
    CHECK_FALSE(fedrep.share_head);

    const StrategySpec full = strategy_preset("pgfedsplit");
    CHECK(full.head_sync == HeadSync::apa);
    CHECK(full.use_gaussian_synth);
    CHECK(full.use_prototype_reg);
    CHECK(full.share_repr);
    CHECK(full.share_head);
    CHECK(full.local_update == LocalUpdate::decoupled);
    CHECK_FALSE(full.fixed_alpha.has_value());

    const StrategySpec no_apa = strategy_preset("pgfedsplit_no_apa");
    CHECK(no_apa.head_sync == HeadSync::fixed_interval);
    CHECK(no_apa.fixed_interval_tau == 5);
    CHECK(no_apa.use_gaussian_synth);

    const StrategySpec no_gau = strategy_preset("pgfedsplit_no_gau");
    CHECK(no_gau.head_sync == HeadSync::apa);
    CHECK_FALSE(no_gau.use_gaussian_synth);
    CHECK(no_gau.use_prototype_reg);

    const StrategySpec no_both = strategy_preset("pgfedsplit_no_apa_gau");
    CHECK(no_both.head_sync == HeadSync::fixed_interval);
    CHECK_FALSE(no_both.use_gaussian_synth);

    CHECK_THROWS_AS(strategy_preset("fedprox"), ParameterError);
}

TEST_CASE("every preset in the registry loads and validates") {
    CHECK(strategy_names().size() == 9);
    for (const std::string& name : strategy_names()) {
        const StrategySpec s = strategy_preset(name);
        CHECK(s.name == name);
        CHECK_NOTHROW(validate(s));
    }
}

TEST_CASE("inconsistent strategy combinations are rejected") {
    StrategySpec s = strategy_preset("pgfedsplit");
    s.share_head = false;  // adaptive sync with nothing to sync
    CHECK_THROWS_AS(validate(s), ParameterError);

    s = strategy_preset("fedavg");
    s.share_head = false;  // every-round sync without head sharing
    CHECK_THROWS_AS(validate(s), ParameterError);

    s = strategy_preset("local");
    s.fixed_alpha = 0.5;  // mixing weight with no head ever delivered
    CHECK_THROWS_AS(validate(s), ParameterError);

    s = strategy_preset("fedavg");
    s.fixed_alpha = 1.5;
    CHECK_THROWS_AS(validate(s), ParameterError);
    s.fixed_alpha = -0.1;
    CHECK_THROWS_AS(validate(s), ParameterError);

    s = strategy_preset("pgfedsplit_no_apa");
    s.fixed_interval_tau = 0;
    CHECK_THROWS_AS(validate(s), ParameterError);

    s = strategy_preset("fedavg_ft");
    s.finetune_epochs = 0;
    CHECK_THROWS_AS(validate(s), ParameterError);

    s = strategy_preset("local");
    s.name.clear();
    CHECK_THROWS_AS(validate(s), ParameterError);
}

TEST_CASE("enum names round-trip through their string forms") {
    for (HeadSync v : {HeadSync::never, HeadSync::every_round, HeadSync::fixed_interval,
                       HeadSync::apa})
        CHECK(head_sync_from_string(to_string(v)) == v);
    for (LocalUpdate v : {LocalUpdate::joint, LocalUpdate::decoupled})
        CHECK(local_update_from_string(to_string(v)) == v);
    for (HeadWeighting v : {HeadWeighting::uniform, HeadWeighting::data_size})
        CHECK(head_weighting_from_string(to_string(v)) == v);
    CHECK_THROWS_AS(head_sync_from_string("sometimes"), ParameterError);
    CHECK_THROWS_AS(local_update_from_string("mixed"), ParameterError);
    CHECK_THROWS_AS(head_weighting_from_string("loss"), ParameterError);
}

TEST_CASE("spec equality notices every field") {
    const StrategySpec a = strategy_preset("pgfedsplit");
    StrategySpec b = a;
    CHECK(a == b);
    b.fixed_alpha = 0.5;
    CHECK_FALSE(a == b);
    b = a;
    b.use_gaussian_synth = false;
    CHECK_FALSE(a == b);
    b = a;
    b.fixed_interval_tau += 1;
    CHECK_FALSE(a == b);
}

TEST_CASE("alpha pinned to 1 with forced sync reproduces the no-sync trajectory") {
    // Mixing with weight 1 keeps the local head, so the only difference from
    // never syncing is dead bookkeeping; client models must match bitwise.
    StrategySpec pinned = strategy_preset("pgfedsplit");
    pinned.head_sync = HeadSync::every_round;
    pinned.fixed_alpha = 1.0;

    StrategySpec never = strategy_preset("pgfedsplit");
    never.head_sync = HeadSync::never;
    never.share_head = false;

    Sim a = make_sim(91, 1, 1, 1);
    Sim b = make_sim(91, 1, 1, 1);
    const auto la = drive(a, pinned, 4);
    const auto lb = drive(b, never, 4);
    for (int t = 0; t < 4; ++t) {
        CHECK(same_accs(la[static_cast<std::size_t>(t)].per_client_acc,
                        lb[static_cast<std::size_t>(t)].per_client_acc));
        CHECK(la[static_cast<std::size_t>(t)].mean_acc ==
              lb[static_cast<std::size_t>(t)].mean_acc);
    }
    for (std::size_t i = 0; i < a.clients.size(); ++i) {
        CHECK(a.clients[i].model.phi.W == b.clients[i].model.phi.W);
        CHECK(a.clients[i].model.phi.b == b.clients[i].model.phi.b);
        for (std::size_t l = 0; l < a.clients[i].model.theta.size(); ++l)
            CHECK(a.clients[i].model.theta[l].W == b.clients[i].model.theta[l].W);
    }
}

TEST_CASE("pinning the adaptive interval bounds reproduces the fixed-interval run") {
    // With tau_min == tau_max the adaptive rule has nowhere to move, so the
    // adaptive and fixed-interval schedulers must walk identical trajectories.
    StrategySpec adaptive = strategy_preset("pgfedsplit");  // head_sync: adaptive
    const StrategySpec fixed = strategy_preset("pgfedsplit_no_apa");  // interval 5

    Sim a = make_sim(93, 5, 5, 5);
    Sim b = make_sim(93, 5, 5, 5);
    const auto la = drive(a, adaptive, 12);
    const auto lb = drive(b, fixed, 12);
    for (int t = 0; t < 12; ++t) {
        const auto u = static_cast<std::size_t>(t);
        CHECK(same_accs(la[u].per_client_acc, lb[u].per_client_acc));
        CHECK(la[u].tau == 5);
        CHECK(lb[u].tau == 5);
        CHECK(la[u].head_delivered == lb[u].head_delivered);
        CHECK(la[u].head_aggregated == lb[u].head_aggregated);
    }
    for (std::size_t i = 0; i < a.clients.size(); ++i)
        CHECK(a.clients[i].model.phi.W == b.clients[i].model.phi.W);
}

}  // TEST_SUITE
