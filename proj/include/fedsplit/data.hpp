#pragma once

#include "fedsplit/types.hpp"

#include <random>
#include <string>
#include <vector>

namespace fedsplit {

// A labeled sample set; features are columns of `x`, `y[j]` labels column j.
struct LabeledDataset {
    Matrix x;            // (feature_dim x n)
    std::vector<int> y;  // values in [0, num_classes)
    int num_classes = 0;

    Eigen::Index size() const { return static_cast<Eigen::Index>(y.size()); }
    Eigen::Index feature_dim() const { return x.rows(); }
};

void validate(const LabeledDataset& ds);

// One client's slice of the data plus its label statistics. Counts and
// proportions are over the training split only.
struct ClientShard {
    int client_id = -1;
    LabeledDataset train;
    LabeledDataset test;
    std::vector<Eigen::Index> counts;  // per-class training counts D_{i,l}
    Eigen::Index total = 0;            // D_i
    Vector q;                          // label proportions; zero vector when total == 0
};

// Builds a shard from already-split data, filling counts/total/q.
ClientShard make_shard(int client_id, LabeledDataset train, LabeledDataset test);

// Class centers for the synthetic task: unit directions drawn from `seed`,
// scaled by `class_separation` (0 collapses all classes onto one center).
// Column c is class c's mean.
Matrix mixture_means(int num_classes, Eigen::Index feature_dim, Scalar class_separation,
                     std::uint64_t seed);

// Unit-variance isotropic draws around the given class means,
// `samples_per_class` columns per class in class order.
LabeledDataset sample_mixture(const Matrix& means, Eigen::Index samples_per_class,
                              std::mt19937_64& rng);

// Isotropic Gaussian blobs, one per class, with means scaled by
// `class_separation` (0 collapses all classes onto one distribution).
// Same seed, same dataset; the means depend on the seed but not on
// `samples_per_class`, so evaluation sets can be drawn from the same task.
LabeledDataset generate_gaussian_mixture(int num_classes, Eigen::Index feature_dim,
                                         Eigen::Index samples_per_class, Scalar class_separation,
                                         std::uint64_t seed);

// Label-skewed partition: per class, client proportions drawn from
// Dirichlet(beta_dir * 1_K). Re-draws the whole partition up to 10 times if a
// client ends up with no samples at all; after that, empty clients are allowed
// with a warning on stderr. Each shard is then split ~75/25 into train/test,
// stratified per label where a class has at least 4 samples (all-train below).
std::vector<ClientShard> dirichlet_partition(const LabeledDataset& dataset, int num_clients,
                                             Scalar beta_dir, std::uint64_t seed);

// Each client receives exactly `classes_per_client` distinct classes; every
// class's samples are split evenly among the clients assigned to it.
std::vector<ClientShard> pathological_partition(const LabeledDataset& dataset, int num_clients,
                                                int classes_per_client, std::uint64_t seed);

// 75/25 split used by the partitioners, exposed for direct use. `rng_seed`
// fixes the per-class shuffles.
void stratified_split(const LabeledDataset& all, std::uint64_t rng_seed, LabeledDataset& train,
                      LabeledDataset& test);

// Text fixture format, one record per line:
//   client_id,split,label,f0,f1,...
// where split is "train" or "test".
void dump_shards(const std::vector<ClientShard>& shards, const std::string& path);
std::vector<ClientShard> load_shards(const std::string& path, int num_classes = -1);

// Concatenates columns of `a` and `b` (same feature_dim / num_classes).
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

// Column subset by index list.
LabeledDataset take(const LabeledDataset& ds, const std::vector<Eigen::Index>& idx);

}  // namespace fedsplit
