#include <doctest.h>

#include "fedsplit/prototypes.hpp"
#include "fedsplit/split_model.hpp"

#include <random>
#include <sstream>

using namespace fedsplit;

namespace {

// A pass-through representation so embeddings equal raw features.
LayerStack identity_theta(Eigen::Index dim) {
    LayerStack theta(1);
    theta[0].W = Matrix::Identity(dim, dim);
    theta[0].b = Vector::Zero(dim);
    return theta;
}

ClientShard shard_from(int id, const Matrix& x, const std::vector<int>& y, int num_classes) {
    LabeledDataset train;
    train.x = x;
    train.y = y;
    train.num_classes = num_classes;
    LabeledDataset test;
    test.x.resize(x.rows(), 0);
    test.num_classes = num_classes;
    return make_shard(id, std::move(train), std::move(test));
}

// Raw per-class embedding collections for brute-force oracles.
using RawByClass = std::map<int, std::vector<Vector>>;

std::vector<LocalClassStats> stats_of(const RawByClass& raw) {
    std::vector<LocalClassStats> out;
    for (const auto& [label, zs] : raw) {
        LocalClassStats s;
        s.label = label;
        s.count = static_cast<Eigen::Index>(zs.size());
        s.embedding_sum = Vector::Zero(zs.front().size());
        s.embedding_sq_sum = Vector::Zero(zs.front().size());
        for (const Vector& z : zs) {
            s.embedding_sum += z;
            s.embedding_sq_sum += z.cwiseAbs2();
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_SUITE("prototypes") {

TEST_CASE("a local prototype is the mean class embedding") {
    Matrix x(1, 2);
    x << 2.0, 4.0;
    const ClientShard shard = shard_from(0, x, {0, 0}, 2);
    const auto stats = compute_local_prototypes(identity_theta(1), shard);
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].label == 0);
    CHECK(stats[0].count == 2);
    CHECK(stats[0].prototype()(0) == doctest::Approx(3.0));
    CHECK(stats[0].embedding_sq_sum(0) == doctest::Approx(4.0 + 16.0));
}

TEST_CASE("absent classes are omitted and empty shards produce nothing") {
    Matrix x(2, 3);
    x << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
    const ClientShard shard = shard_from(0, x, {0, 0, 2}, 4);
    const auto stats = compute_local_prototypes(identity_theta(2), shard);
    REQUIRE(stats.size() == 2);
    CHECK(stats[0].label == 0);
    CHECK(stats[1].label == 2);

    Matrix none(2, 0);
    const ClientShard empty = shard_from(1, none, {}, 4);
    CHECK(compute_local_prototypes(identity_theta(2), empty).empty());
}

TEST_CASE("global prototypes are unweighted client means") {
    // Client 0 holds one sample at 2, client 1 three samples averaging 4:
    // the aggregate is the midpoint 3, not the sample-weighted 3.5.
    RawByClass a, b;
    a[0] = {Vector::Constant(1, 2.0)};
    b[0] = {Vector::Constant(1, 3.0), Vector::Constant(1, 4.0), Vector::Constant(1, 5.0)};
    std::map<int, std::vector<LocalClassStats>> uploads;
    uploads[0] = stats_of(a);
    uploads[1] = stats_of(b);
    const auto protos = aggregate_global_prototypes(uploads, {0, 1});
    REQUIRE(protos.size() == 1);
    CHECK(protos[0].prototype(0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(protos[0].contributing_clients == 2);
}

TEST_CASE("global prototypes match a brute-force oracle on random fixtures") {
    std::mt19937_64 rng(404);
    std::normal_distribution<Scalar> normal(0.0, 2.0);
    std::uniform_int_distribution<int> count_dist(1, 6);
    std::uniform_real_distribution<Scalar> presence(0.0, 1.0);
    const int clients = 5, classes = 6;
    const Eigen::Index dim = 3;

    for (int trial = 0; trial < 25; ++trial) {
        std::map<int, std::vector<LocalClassStats>> uploads;
        std::map<int, std::vector<Vector>> all_protos_by_class;
        for (int i = 0; i < clients; ++i) {
            RawByClass raw;
            for (int c = 0; c < classes; ++c) {
                if (presence(rng) < 0.45) continue;
                const int n = count_dist(rng);
                for (int k = 0; k < n; ++k) {
                    Vector z(dim);
                    for (Eigen::Index d = 0; d < dim; ++d) z(d) = normal(rng);
                    raw[c].push_back(z);
                }
            }
            if (raw.empty()) continue;
            uploads[i] = stats_of(raw);
            for (const auto& [c, zs] : raw) {
                Vector mean = Vector::Zero(dim);
                for (const Vector& z : zs) mean += z;
                all_protos_by_class[c].push_back(mean / static_cast<Scalar>(zs.size()));
            }
        }
        if (uploads.empty()) continue;
        const auto protos = aggregate_global_prototypes(uploads, {0, 1, 2, 3, 4});
        REQUIRE(protos.size() == all_protos_by_class.size());
        for (const auto& p : protos) {
            Vector oracle = Vector::Zero(dim);
            const auto& contributions = all_protos_by_class.at(p.label);
            for (const Vector& v : contributions) oracle += v;
            oracle /= static_cast<Scalar>(contributions.size());
            CHECK((p.prototype - oracle).cwiseAbs().maxCoeff() < 1e-10);
            CHECK(p.contributing_clients == static_cast<int>(contributions.size()));
        }
    }
}

TEST_CASE("uploads outside the participant set are rejected") {
    RawByClass raw;
    raw[0] = {Vector::Constant(1, 1.0)};
    std::map<int, std::vector<LocalClassStats>> uploads;
    uploads[7] = stats_of(raw);
    CHECK_THROWS_AS(aggregate_global_prototypes(uploads, {0, 1}), ContractError);
}

TEST_CASE("gaussian statistics use the published mean and the pooled variance") {
    // Two single-sample clients at 0 and 2: pooled mean 1, population variance 1.
    RawByClass a, b;
    a[0] = {Vector::Constant(1, 0.0)};
    b[0] = {Vector::Constant(1, 2.0)};
    std::map<int, std::vector<LocalClassStats>> uploads;
    uploads[0] = stats_of(a);
    uploads[1] = stats_of(b);
    const auto protos = aggregate_global_prototypes(uploads, {0, 1});
    const auto gauss = estimate_gaussian_stats(uploads, protos);
    REQUIRE(gauss.size() == 1);
    CHECK(gauss[0].mu(0) == doctest::Approx(1.0));
    CHECK(gauss[0].sigma_diag(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a single pooled sample yields zero variance, not garbage") {
    RawByClass a;
    a[3] = {Vector::Constant(2, 5.0)};
    std::map<int, std::vector<LocalClassStats>> uploads;
    uploads[0] = stats_of(a);
    const auto protos = aggregate_global_prototypes(uploads, {0});
    const auto gauss = estimate_gaussian_stats(uploads, protos);
    REQUIRE(gauss.size() == 1);
    CHECK(gauss[0].sigma_diag.isZero(0.0));
}

TEST_CASE("variance pooling is invariant to how samples are split across clients") {
    std::mt19937_64 rng(777);
    std::normal_distribution<Scalar> normal(1.0, 3.0);
    const Eigen::Index dim = 2;
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> n_dist(2, 12);
        const int n = n_dist(rng);
        std::vector<Vector> zs;
        for (int k = 0; k < n; ++k) {
            Vector z(dim);
            for (Eigen::Index d = 0; d < dim; ++d) z(d) = normal(rng);
            zs.push_back(z);
        }
        // Merged: one client holds everything.
        RawByClass merged_raw;
        merged_raw[0] = zs;
        std::map<int, std::vector<LocalClassStats>> merged;
        merged[0] = stats_of(merged_raw);
        const auto merged_stats =
            estimate_gaussian_stats(merged, aggregate_global_prototypes(merged, {0}));

        // Split: a random cut across two clients (both nonempty).
        std::uniform_int_distribution<int> cut_dist(1, n - 1);
        const int cut = cut_dist(rng);
        RawByClass left_raw, right_raw;
        left_raw[0].assign(zs.begin(), zs.begin() + cut);
        right_raw[0].assign(zs.begin() + cut, zs.end());
        std::map<int, std::vector<LocalClassStats>> split;
        split[0] = stats_of(left_raw);
        split[1] = stats_of(right_raw);
        const auto split_stats =
            estimate_gaussian_stats(split, aggregate_global_prototypes(split, {0, 1}));

        CHECK((merged_stats[0].sigma_diag - split_stats[0].sigma_diag).cwiseAbs().maxCoeff() <
              1e-9);
    }
}

TEST_CASE("statistics without backing uploads are a contract violation") {
    RawByClass raw;
    raw[0] = {Vector::Constant(1, 1.0)};
    std::map<int, std::vector<LocalClassStats>> uploads;
    uploads[0] = stats_of(raw);
    std::vector<GlobalPrototype> protos(1);
    protos[0].label = 9;  // nobody uploaded class 9
    protos[0].prototype = Vector::Zero(1);
    CHECK_THROWS_AS(estimate_gaussian_stats(uploads, protos), ContractError);
}

TEST_CASE("retained statistics survive rounds that do not refresh them") {
    GaussianClassStats old0, old1, new0;
    old0.label = 0;
    old0.mu = Vector::Constant(1, 10.0);
    old0.sigma_diag = Vector::Constant(1, 1.0);
    old1.label = 1;
    old1.mu = Vector::Constant(1, 20.0);
    old1.sigma_diag = Vector::Constant(1, 2.0);
    new0.label = 0;
    new0.mu = Vector::Constant(1, 11.0);
    new0.sigma_diag = Vector::Constant(1, 1.5);

    std::map<int, GaussianClassStats> previous;
    previous[0] = old0;
    previous[1] = old1;
    const auto merged = retain_stats({new0}, previous);
    REQUIRE(merged.size() == 2);
    CHECK(merged.at(0).mu(0) == doctest::Approx(11.0));  // refreshed
    CHECK(merged.at(1).mu(0) == doctest::Approx(20.0));  // carried forward

    const auto pmap = prototype_map(merged);
    CHECK(pmap.at(0)(0) == doctest::Approx(11.0));
    CHECK(available_classes(merged) == std::set<int>{0, 1});
}

TEST_CASE("aggregation order does not change the result") {
    std::mt19937_64 rng(99);
    std::normal_distribution<Scalar> normal(0.0, 1.0);
    RawByClass a, b, c;
    for (int k = 0; k < 4; ++k) {
        Vector z(2);
        z << normal(rng), normal(rng);
        a[0].push_back(z);
        z << normal(rng), normal(rng);
        b[0].push_back(z);
        z << normal(rng), normal(rng);
        c[0].push_back(z);
    }
    std::map<int, std::vector<LocalClassStats>> order1, order2;
    order1[0] = stats_of(a);
    order1[1] = stats_of(b);
    order1[2] = stats_of(c);
    order2[0] = stats_of(a);
    order2[1] = stats_of(b);
    order2[2] = stats_of(c);
    // Same content under relabeled client ids (map order differs from insertion).
    std::map<int, std::vector<LocalClassStats>> relabeled;
    relabeled[2] = stats_of(a);
    relabeled[0] = stats_of(b);
    relabeled[1] = stats_of(c);

    const auto p1 = aggregate_global_prototypes(order1, {0, 1, 2});
    const auto p2 = aggregate_global_prototypes(relabeled, {0, 1, 2});
    CHECK((p1[0].prototype - p2[0].prototype).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("snapshot export writes one labeled line per class") {
    std::map<int, GaussianClassStats> stats;
    GaussianClassStats s;
    s.label = 2;
    s.mu = Vector::Constant(2, 0.5);
    s.sigma_diag = Vector::Constant(2, 0.25);
    stats[2] = s;
    std::map<int, int> contributing;
    contributing[2] = 3;
    std::ostringstream out;
    export_stats_snapshot(out, stats, contributing);
    CHECK(out.str() == "2,3,0.5,0.5,0.25,0.25\n");
}

}  // TEST_SUITE
