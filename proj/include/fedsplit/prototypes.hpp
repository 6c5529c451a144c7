#pragma once

#include "fedsplit/data.hpp"
#include "fedsplit/nn.hpp"
#include "fedsplit/types.hpp"

#include <iosfwd>
#include <map>
#include <set>
#include <vector>

namespace fedsplit {

// Per-class sufficient statistics a client uploads: count, embedding sum, and
// elementwise sum of squares (the latter feeds the server's variance pooling).
struct LocalClassStats {
    int label = -1;
    Eigen::Index count = 0;
    Vector embedding_sum;
    Vector embedding_sq_sum;

    Vector prototype() const { return embedding_sum / static_cast<Scalar>(count); }
};

struct GlobalPrototype {
    int label = -1;
    Vector prototype;
    int contributing_clients = 0;
};

// Diagonal Gaussian summary of one class's embeddings across clients. `mu` is
// the unweighted mean of client prototypes; `sigma_diag` is the pooled
// per-dimension population variance of the raw embeddings.
struct GaussianClassStats {
    int label = -1;
    Vector mu;
    Vector sigma_diag;
};

// Mean training-set embedding per class present in the shard (absent classes
// are simply omitted).
std::vector<LocalClassStats> compute_local_prototypes(const LayerStack& theta,
                                                      const ClientShard& shard);

// Unweighted mean of client prototypes per class over the clients that hold
// the class. Upload keys must be a subset of `participants`.
std::vector<GlobalPrototype> aggregate_global_prototypes(
    const std::map<int, std::vector<LocalClassStats>>& uploads, const std::vector<int>& participants);

// mu = the aggregated prototype; sigma_diag = pooled population variance of
// all uploaded embeddings around their pooled mean, floored at zero. A single
// pooled sample yields zero variance.
std::vector<GaussianClassStats> estimate_gaussian_stats(
    const std::map<int, std::vector<LocalClassStats>>& uploads,
    const std::vector<GlobalPrototype>& global_prototypes);

// Carries forward last round's statistics for classes no current participant
// holds, so partial participation does not flap the regularizer's support.
std::map<int, GaussianClassStats> retain_stats(const std::vector<GaussianClassStats>& current,
                                               const std::map<int, GaussianClassStats>& previous);

std::map<int, Vector> prototype_map(const std::map<int, GaussianClassStats>& stats);
std::set<int> available_classes(const std::map<int, GaussianClassStats>& stats);

// Debug/fixture dump, one line per class: label, contributing-client count,
// mu entries, sigma entries.
void export_stats_snapshot(std::ostream& out, const std::map<int, GaussianClassStats>& stats,
                           const std::map<int, int>& contributing);

}  // namespace fedsplit
