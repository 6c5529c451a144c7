#include "fedsplit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace fedsplit {

namespace {

std::vector<std::vector<Eigen::Index>> indices_by_class(const LabeledDataset& ds) {
    std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (Eigen::Index j = 0; j < ds.size(); ++j)
        by_class[static_cast<std::size_t>(ds.y[static_cast<std::size_t>(j)])].push_back(j);
    return by_class;
}

// Splits `total` into `parts` integer chunks proportional to `weights`,
// conserving the total exactly (largest-remainder rounding).
std::vector<Eigen::Index> proportional_counts(Eigen::Index total, const std::vector<Scalar>& weights) {
    const std::size_t parts = weights.size();
    const Scalar wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<Eigen::Index> counts(parts, 0);
    if (total == 0 || wsum <= 0.0) return counts;
    std::vector<std::pair<Scalar, std::size_t>> remainders(parts);
    Eigen::Index assigned = 0;
    for (std::size_t i = 0; i < parts; ++i) {
        const Scalar exact = static_cast<Scalar>(total) * weights[i] / wsum;
        counts[i] = static_cast<Eigen::Index>(std::floor(exact));
        assigned += counts[i];
        remainders[i] = {exact - std::floor(exact), i};
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (Eigen::Index k = 0; k < total - assigned; ++k) ++counts[remainders[static_cast<std::size_t>(k)].second];
    return counts;
}

std::vector<ClientShard> finalize_shards(const LabeledDataset& dataset,
                                         const std::vector<std::vector<Eigen::Index>>& per_client,
                                         std::uint64_t seed) {
    std::vector<ClientShard> shards;
    shards.reserve(per_client.size());
    for (std::size_t i = 0; i < per_client.size(); ++i) {
        LabeledDataset mine = take(dataset, per_client[i]);
        LabeledDataset train, test;
        stratified_split(mine, derive_seed(seed, {static_cast<std::uint64_t>(Stream::train_test_split), i}),
                         train, test);
        shards.push_back(make_shard(static_cast<int>(i), std::move(train), std::move(test)));
    }
    return shards;
}

}  // namespace

void validate(const LabeledDataset& ds) {
    if (ds.num_classes < 1) throw ParameterError("dataset needs at least one class");
    if (ds.x.cols() != ds.size()) throw ShapeError("feature column count does not match label count");
    for (int label : ds.y)
        if (label < 0 || label >= ds.num_classes) throw IndexError("label out of range");
}

ClientShard make_shard(int client_id, LabeledDataset train, LabeledDataset test) {
    if (train.num_classes != test.num_classes) throw ShapeError("train/test class count mismatch");
    if (train.feature_dim() != test.feature_dim()) throw ShapeError("train/test feature dim mismatch");
    ClientShard s;
    s.client_id = client_id;
    s.counts.assign(static_cast<std::size_t>(train.num_classes), 0);
    for (int label : train.y) ++s.counts[static_cast<std::size_t>(label)];
    s.total = train.size();
    s.q = Vector::Zero(train.num_classes);
    if (s.total > 0)
        for (int l = 0; l < train.num_classes; ++l)
            s.q(l) = static_cast<Scalar>(s.counts[static_cast<std::size_t>(l)]) / static_cast<Scalar>(s.total);
    s.train = std::move(train);
    s.test = std::move(test);
    return s;
}

Matrix mixture_means(int num_classes, Eigen::Index feature_dim, Scalar class_separation,
                     std::uint64_t seed) {
    if (num_classes < 1) throw ParameterError("num_classes must be positive");
    if (feature_dim < 1) throw ParameterError("feature_dim must be positive");
    if (class_separation < 0.0) throw ParameterError("class_separation must be nonnegative");

    std::mt19937_64 rng = substream(seed, Stream::data_gen, {0});
    std::normal_distribution<Scalar> unit(0.0, 1.0);
    Matrix means(feature_dim, num_classes);
    for (int c = 0; c < num_classes; ++c) {
        Vector dir(feature_dim);
        for (Eigen::Index k = 0; k < feature_dim; ++k) dir(k) = unit(rng);
        const Scalar norm = dir.norm();
        if (norm > 0.0) dir /= norm;
        means.col(c) = class_separation * dir;
    }
    return means;
}

LabeledDataset sample_mixture(const Matrix& means, Eigen::Index samples_per_class,
                              std::mt19937_64& rng) {
    if (samples_per_class < 1) throw ParameterError("samples_per_class must be positive");
    if (means.cols() < 1 || means.rows() < 1) throw ShapeError("empty mixture means");
    std::normal_distribution<Scalar> unit(0.0, 1.0);
    LabeledDataset ds;
    ds.num_classes = static_cast<int>(means.cols());
    ds.x.resize(means.rows(), means.cols() * samples_per_class);
    ds.y.resize(static_cast<std::size_t>(ds.x.cols()));
    Eigen::Index col = 0;
    for (int c = 0; c < ds.num_classes; ++c) {
        for (Eigen::Index k = 0; k < samples_per_class; ++k, ++col) {
            for (Eigen::Index d = 0; d < means.rows(); ++d) ds.x(d, col) = means(d, c) + unit(rng);
            ds.y[static_cast<std::size_t>(col)] = c;
        }
    }
    return ds;
}

LabeledDataset generate_gaussian_mixture(int num_classes, Eigen::Index feature_dim,
                                         Eigen::Index samples_per_class, Scalar class_separation,
                                         std::uint64_t seed) {
    const Matrix means = mixture_means(num_classes, feature_dim, class_separation, seed);
    std::mt19937_64 rng = substream(seed, Stream::data_gen, {1});
    return sample_mixture(means, samples_per_class, rng);
}

std::vector<ClientShard> dirichlet_partition(const LabeledDataset& dataset, int num_clients,
                                             Scalar beta_dir, std::uint64_t seed) {
    validate(dataset);
    if (num_clients < 1) throw ParameterError("num_clients must be positive");
    if (beta_dir <= 0.0) throw ParameterError("Dirichlet concentration must be positive");
    const auto by_class = indices_by_class(dataset);
    for (std::size_t l = 0; l < by_class.size(); ++l)
        if (by_class[l].empty())
            throw ParameterError("class " + std::to_string(l) + " has no samples to partition");

    const int max_attempts = 10;
    std::vector<std::vector<Eigen::Index>> per_client;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        std::mt19937_64 rng = substream(seed, Stream::partition, {static_cast<std::uint64_t>(attempt)});
        std::gamma_distribution<Scalar> gamma(beta_dir, 1.0);
        per_client.assign(static_cast<std::size_t>(num_clients), {});
        for (int l = 0; l < dataset.num_classes; ++l) {
            std::vector<Scalar> props(static_cast<std::size_t>(num_clients));
            for (auto& p : props) p = gamma(rng);
            std::vector<Eigen::Index> idx = by_class[static_cast<std::size_t>(l)];
            std::shuffle(idx.begin(), idx.end(), rng);
            const std::vector<Eigen::Index> counts =
                proportional_counts(static_cast<Eigen::Index>(idx.size()), props);
            std::size_t cursor = 0;
            for (int i = 0; i < num_clients; ++i)
                for (Eigen::Index k = 0; k < counts[static_cast<std::size_t>(i)]; ++k)
                    per_client[static_cast<std::size_t>(i)].push_back(idx[cursor++]);
        }
        const bool any_empty = std::any_of(per_client.begin(), per_client.end(),
                                           [](const auto& v) { return v.empty(); });
        if (!any_empty) break;
        if (attempt == max_attempts - 1)
            std::fprintf(stderr,
                         "warning: Dirichlet partition left at least one client empty after %d draws; "
                         "keeping the last draw\n",
                         max_attempts);
    }
    return finalize_shards(dataset, per_client, seed);
}

std::vector<ClientShard> pathological_partition(const LabeledDataset& dataset, int num_clients,
                                                int classes_per_client, std::uint64_t seed) {
    validate(dataset);
    if (num_clients < 1) throw ParameterError("num_clients must be positive");
    if (classes_per_client < 1 || classes_per_client > dataset.num_classes)
        throw ParameterError("classes_per_client must be in [1, num_classes]");
    if (static_cast<long long>(classes_per_client) * num_clients < dataset.num_classes)
        throw ParameterError("not enough client-class slots to cover every class");

    // Client i takes the consecutive class block {i*n, ..., i*n + n - 1} mod |L|,
    // so every class lands on at least one client and blocks stay distinct.
    std::vector<std::vector<int>> clients_of_class(static_cast<std::size_t>(dataset.num_classes));
    for (int i = 0; i < num_clients; ++i)
        for (int j = 0; j < classes_per_client; ++j)
            clients_of_class[static_cast<std::size_t>((static_cast<long long>(i) * classes_per_client + j) %
                                                      dataset.num_classes)]
                .push_back(i);

    const auto by_class = indices_by_class(dataset);
    std::mt19937_64 rng = substream(seed, Stream::partition);
    std::vector<std::vector<Eigen::Index>> per_client(static_cast<std::size_t>(num_clients));
    for (int l = 0; l < dataset.num_classes; ++l) {
        std::vector<Eigen::Index> idx = by_class[static_cast<std::size_t>(l)];
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto& owners = clients_of_class[static_cast<std::size_t>(l)];
        const std::vector<Scalar> even(owners.size(), 1.0);
        const std::vector<Eigen::Index> counts =
            proportional_counts(static_cast<Eigen::Index>(idx.size()), even);
        std::size_t cursor = 0;
        for (std::size_t o = 0; o < owners.size(); ++o)
            for (Eigen::Index k = 0; k < counts[o]; ++k)
                per_client[static_cast<std::size_t>(owners[o])].push_back(idx[cursor++]);
    }
    return finalize_shards(dataset, per_client, seed);
}

void stratified_split(const LabeledDataset& all, std::uint64_t rng_seed, LabeledDataset& train,
                      LabeledDataset& test) {
    validate(all);
    std::mt19937_64 rng(rng_seed);
    std::vector<Eigen::Index> train_idx, test_idx;
    const auto by_class = indices_by_class(all);
    for (const auto& members : by_class) {
        std::vector<Eigen::Index> idx = members;
        std::shuffle(idx.begin(), idx.end(), rng);
        const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
        const Eigen::Index n_test = n >= 4 ? static_cast<Eigen::Index>(std::llround(0.25 * static_cast<Scalar>(n))) : 0;
        for (Eigen::Index k = 0; k < n; ++k)
            (k < n_test ? test_idx : train_idx).push_back(idx[static_cast<std::size_t>(k)]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    train = take(all, train_idx);
    test = take(all, test_idx);
}

void dump_shards(const std::vector<ClientShard>& shards, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.precision(17);
    auto write_split = [&](const ClientShard& s, const LabeledDataset& ds, const char* name) {
        for (Eigen::Index j = 0; j < ds.size(); ++j) {
            out << s.client_id << ',' << name << ',' << ds.y[static_cast<std::size_t>(j)];
            for (Eigen::Index d = 0; d < ds.feature_dim(); ++d) out << ',' << ds.x(d, j);
            out << '\n';
        }
    };
    for (const ClientShard& s : shards) {
        write_split(s, s.train, "train");
        write_split(s, s.test, "test");
    }
    if (!out) throw IoError("write to " + path + " failed");
}

std::vector<ClientShard> load_shards(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    struct Row {
        int client;
        bool is_train;
        int label;
        std::vector<Scalar> feats;
    };
    std::vector<Row> rows;
    Eigen::Index feature_dim = -1;
    int max_client = -1, max_label = -1;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        Row r;
        try {
            if (!std::getline(ss, field, ',')) throw IoError("");
            r.client = std::stoi(field);
            if (!std::getline(ss, field, ',')) throw IoError("");
            if (field == "train") r.is_train = true;
            else if (field == "test") r.is_train = false;
            else throw IoError("");
            if (!std::getline(ss, field, ',')) throw IoError("");
            r.label = std::stoi(field);
            while (std::getline(ss, field, ',')) r.feats.push_back(std::stod(field));
        } catch (const std::exception&) {
            throw IoError(path + ":" + std::to_string(lineno) + ": malformed record");
        }
        if (r.feats.empty() || r.client < 0 || r.label < 0)
            throw IoError(path + ":" + std::to_string(lineno) + ": malformed record");
        if (feature_dim < 0) feature_dim = static_cast<Eigen::Index>(r.feats.size());
        else if (feature_dim != static_cast<Eigen::Index>(r.feats.size()))
            throw IoError(path + ":" + std::to_string(lineno) + ": inconsistent feature dimension");
        max_client = std::max(max_client, r.client);
        max_label = std::max(max_label, r.label);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw IoError(path + ": no records");
    if (num_classes < 0) num_classes = max_label + 1;
    if (max_label >= num_classes) throw IoError(path + ": label exceeds declared class count");

    std::vector<ClientShard> shards;
    for (int c = 0; c <= max_client; ++c) {
        std::vector<const Row*> tr, te;
        for (const Row& r : rows)
            if (r.client == c) (r.is_train ? tr : te).push_back(&r);
        auto build = [&](const std::vector<const Row*>& sel) {
            LabeledDataset ds;
            ds.num_classes = num_classes;
            ds.x.resize(feature_dim, static_cast<Eigen::Index>(sel.size()));
            ds.y.resize(sel.size());
            for (std::size_t j = 0; j < sel.size(); ++j) {
                for (Eigen::Index d = 0; d < feature_dim; ++d)
                    ds.x(d, static_cast<Eigen::Index>(j)) = sel[j]->feats[static_cast<std::size_t>(d)];
                ds.y[j] = sel[j]->label;
            }
            return ds;
        };
        shards.push_back(make_shard(c, build(tr), build(te)));
    }
    return shards;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.num_classes != b.num_classes) throw ShapeError("concat: class count mismatch");
    if (a.feature_dim() != b.feature_dim() && a.size() > 0 && b.size() > 0)
        throw ShapeError("concat: feature dim mismatch");
    if (a.size() == 0) return b;
    if (b.size() == 0) return a;
    LabeledDataset out;
    out.num_classes = a.num_classes;
    out.x.resize(a.feature_dim(), a.size() + b.size());
    out.x.leftCols(a.size()) = a.x;
    out.x.rightCols(b.size()) = b.x;
    out.y = a.y;
    out.y.insert(out.y.end(), b.y.begin(), b.y.end());
    return out;
}

LabeledDataset take(const LabeledDataset& ds, const std::vector<Eigen::Index>& idx) {
    LabeledDataset out;
    out.num_classes = ds.num_classes;
    out.x.resize(ds.feature_dim(), static_cast<Eigen::Index>(idx.size()));
    out.y.resize(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (idx[j] < 0 || idx[j] >= ds.size()) throw IndexError("take: index out of range");
        out.x.col(static_cast<Eigen::Index>(j)) = ds.x.col(idx[j]);
        out.y[j] = ds.y[static_cast<std::size_t>(idx[j])];
    }
    return out;
}

}  // namespace fedsplit
