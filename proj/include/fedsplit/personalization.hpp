#pragma once

#include "fedsplit/data.hpp"
#include "fedsplit/prototypes.hpp"
#include "fedsplit/split_model.hpp"
#include "fedsplit/types.hpp"

#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

namespace fedsplit {

// Tracks when this client last adapted to a delivered aggregated head.
// t_last = -1 until the first adaptation, so round t sees a gap of t + 1.
struct AdaptationState {
    int t_last = -1;
};

// gap = t - t_last; grows while the client keeps missing head deliveries.
int adaptation_gap(int t, const AdaptationState& state);

enum class Origin { local, synthetic };

// Embedding-space dataset used for head training and alpha selection: local
// samples pushed through the frozen representation plus synthetic draws.
struct MixedDataset {
    Matrix z;  // (d x n)
    std::vector<int> y;
    std::vector<Origin> origin;
    int num_classes = 0;

    Eigen::Index size() const { return static_cast<Eigen::Index>(y.size()); }
};

struct AlphaRecord {
    int client_id = -1;
    Scalar alpha = 1.0;
    int delta = 0;
    int round = -1;
};

// Class-dependent spread of synthetic draws as a function of local label
// proportions: 1 - q_l clipped to [0, 1]. With `normalize`, values are rescaled
// so their mean over `stats_classes` is 1.
Scalar variance_scale(const Vector& q, int l, bool normalize, const std::set<int>& stats_classes);

using GammaFn = std::function<Scalar(int)>;

GammaFn make_variance_scale_fn(const Vector& q, bool normalize, const std::set<int>& stats_classes);

struct SyntheticSamples {
    Matrix z;  // (d x n_synth)
    std::vector<int> y;
    Eigen::Index resampled = 0;  // draws rejected for lack of class statistics
};

// Draws ceil(r/(1-r) * n_local) embeddings. Labels follow the local label
// proportions, optionally smoothed toward uniform-over-stats-classes by
// `label_smoothing`; each embedding comes from N(mu_l, gamma_l^2 * sigma_l)
// per dimension. Labels without statistics are resampled (and counted); if the
// label distribution has no overlap with the available statistics at all, the
// result is empty and a warning is printed.
SyntheticSamples sample_global_embeddings(const std::map<int, GaussianClassStats>& stats,
                                          const Vector& q, Eigen::Index n_local, Scalar r,
                                          const GammaFn& gamma, std::mt19937_64& rng,
                                          Scalar label_smoothing = 0.0);

// Embeds the shard's training samples through the frozen representation and
// appends the synthetic draws, tagging origins.
MixedDataset build_mixed_dataset(const LayerStack& theta, const ClientShard& shard,
                                 const SyntheticSamples& synthetic);

// Exhaustive search over alpha in {0, 0.01, ..., 1} minimizing
//   mean CE(alpha * local + (1-alpha) * global logits, y)
//   + beta_reg * delta * alpha^2 * mean KL(softmax(local/T) || softmax(global/T)).
// Ties go to the larger alpha (keep local specialization when indifferent).
AlphaRecord optimize_alpha(const Layer& phi_local, const Layer& phi_global,
                           const MixedDataset& mixed, int delta, const TrainConfig& cfg,
                           int client_id = -1, int round = -1);

// The objective evaluated at one alpha, exposed for oracle comparisons.
Scalar alpha_objective(const Layer& phi_local, const Layer& phi_global, const MixedDataset& mixed,
                       int delta, const TrainConfig& cfg, Scalar alpha);

}  // namespace fedsplit
