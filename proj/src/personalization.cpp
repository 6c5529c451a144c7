#include "fedsplit/personalization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace fedsplit {

int adaptation_gap(int t, const AdaptationState& state) {
    if (t < state.t_last)
        throw ContractError("adaptation gap queried for round " + std::to_string(t) +
                            " before last adaptation round " + std::to_string(state.t_last));
    return t - state.t_last;
}

Scalar variance_scale(const Vector& q, int l, bool normalize, const std::set<int>& stats_classes) {
    if (l < 0 || l >= q.size()) throw IndexError("variance_scale: class out of range");
    auto raw = [&](int c) { return std::clamp(1.0 - q(c), 0.0, 1.0); };
    if (!normalize) return raw(l);
    if (stats_classes.empty()) return raw(l);
    Scalar mean = 0.0;
    for (int c : stats_classes) {
        if (c < 0 || c >= q.size()) throw IndexError("variance_scale: stats class out of range");
        mean += raw(c);
    }
    mean /= static_cast<Scalar>(stats_classes.size());
    if (mean <= 0.0) return raw(l);  // all-dominant degenerate case; nothing to rescale
    return raw(l) / mean;
}

GammaFn make_variance_scale_fn(const Vector& q, bool normalize,
                               const std::set<int>& stats_classes) {
    return [q, normalize, stats_classes](int l) {
        return variance_scale(q, l, normalize, stats_classes);
    };
}

SyntheticSamples sample_global_embeddings(const std::map<int, GaussianClassStats>& stats,
                                          const Vector& q, Eigen::Index n_local, Scalar r,
                                          const GammaFn& gamma, std::mt19937_64& rng,
                                          Scalar label_smoothing) {
    if (!(r > 0.0 && r < 1.0)) throw ParameterError("synthetic ratio r must lie in (0, 1)");
    if (n_local < 0) throw ParameterError("negative local sample count");
    if (label_smoothing < 0.0 || label_smoothing > 1.0)
        throw ParameterError("label smoothing must lie in [0, 1]");

    SyntheticSamples out;
    // Nudge below the exact ratio before rounding up so float noise in
    // r / (1 - r) cannot inflate an integral target (e.g. 9.000000000000002).
    const Eigen::Index n_synth = static_cast<Eigen::Index>(
        std::ceil(r / (1.0 - r) * static_cast<Scalar>(n_local) - 1e-9));
    out.y.reserve(static_cast<std::size_t>(n_synth));
    if (n_synth == 0 || stats.empty()) {
        // No statistics yet (e.g. before the first exchange): quietly train on
        // local embeddings alone.
        out.z.resize(stats.empty() ? 0 : stats.begin()->second.mu.size(), 0);
        return out;
    }

    std::vector<Scalar> weights(static_cast<std::size_t>(q.size()), 0.0);
    const Scalar uniform =
        stats.empty() ? 0.0 : label_smoothing / static_cast<Scalar>(stats.size());
    for (int l = 0; l < q.size(); ++l) {
        weights[static_cast<std::size_t>(l)] = (1.0 - label_smoothing) * q(l);
        if (stats.count(l)) weights[static_cast<std::size_t>(l)] += uniform;
    }
    const bool reachable = std::any_of(stats.begin(), stats.end(), [&](const auto& kv) {
        return kv.first >= 0 && kv.first < q.size() && weights[static_cast<std::size_t>(kv.first)] > 0.0;
    });
    if (!reachable) {
        std::fprintf(stderr,
                     "warning: synthetic label distribution has no mass on any class with "
                     "statistics; returning no synthetic samples\n");
        out.z.resize(stats.empty() ? 0 : stats.begin()->second.mu.size(), 0);
        return out;
    }

    std::discrete_distribution<int> label_dist(weights.begin(), weights.end());
    std::normal_distribution<Scalar> unit(0.0, 1.0);
    const Eigen::Index d = stats.begin()->second.mu.size();
    out.z.resize(d, n_synth);
    Eigen::Index filled = 0;
    while (filled < n_synth) {
        const int label = label_dist(rng);
        const auto it = stats.find(label);
        if (it == stats.end()) {
            ++out.resampled;
            continue;
        }
        const GaussianClassStats& g = it->second;
        const Scalar scale = gamma(label);
        for (Eigen::Index k = 0; k < d; ++k)
            out.z(k, filled) = g.mu(k) + scale * std::sqrt(g.sigma_diag(k)) * unit(rng);
        out.y.push_back(label);
        ++filled;
    }
    if (out.resampled > 0)
        std::fprintf(stderr, "warning: resampled %lld synthetic labels lacking class statistics\n",
                     static_cast<long long>(out.resampled));
    return out;
}

MixedDataset build_mixed_dataset(const LayerStack& theta, const ClientShard& shard,
                                 const SyntheticSamples& synthetic) {
    MixedDataset mixed;
    mixed.num_classes = shard.train.num_classes;
    const Eigen::Index n_local = shard.train.size();
    const Eigen::Index n_synth = static_cast<Eigen::Index>(synthetic.y.size());
    const Eigen::Index d = n_local > 0 ? output_dim(theta) : synthetic.z.rows();
    if (n_synth > 0 && n_local > 0 && synthetic.z.rows() != d)
        throw ShapeError("synthetic embedding dimension does not match representation output");
    mixed.z.resize(d, n_local + n_synth);
    mixed.y.reserve(static_cast<std::size_t>(n_local + n_synth));
    mixed.origin.reserve(static_cast<std::size_t>(n_local + n_synth));
    if (n_local > 0) {
        mixed.z.leftCols(n_local) = embed(theta, shard.train.x);
        mixed.y.insert(mixed.y.end(), shard.train.y.begin(), shard.train.y.end());
        mixed.origin.insert(mixed.origin.end(), static_cast<std::size_t>(n_local), Origin::local);
    }
    if (n_synth > 0) {
        mixed.z.rightCols(n_synth) = synthetic.z;
        mixed.y.insert(mixed.y.end(), synthetic.y.begin(), synthetic.y.end());
        mixed.origin.insert(mixed.origin.end(), static_cast<std::size_t>(n_synth),
                            Origin::synthetic);
    }
    return mixed;
}

Scalar alpha_objective(const Layer& phi_local, const Layer& phi_global, const MixedDataset& mixed,
                       int delta, const TrainConfig& cfg, Scalar alpha) {
    if (mixed.size() == 0) throw ContractError("alpha objective over empty mixed dataset");
    if (delta < 0) throw ParameterError("negative adaptation gap");
    const Matrix logits_local = head_logits(phi_local, mixed.z);
    const Matrix logits_global = head_logits(phi_global, mixed.z);
    const Matrix logits = alpha * logits_local + (1.0 - alpha) * logits_global;
    const Scalar ce = cross_entropy(logits, mixed.y);
    const Scalar mean_kl = kl_divergence_columns(softmax_temperature(logits_local, cfg.t_kd),
                                                 softmax_temperature(logits_global, cfg.t_kd))
                               .mean();
    return ce + cfg.beta_reg * static_cast<Scalar>(delta) * alpha * alpha * mean_kl;
}

AlphaRecord optimize_alpha(const Layer& phi_local, const Layer& phi_global,
                           const MixedDataset& mixed, int delta, const TrainConfig& cfg,
                           int client_id, int round) {
    if (mixed.size() == 0) throw ContractError("optimize_alpha over empty mixed dataset");
    if (delta < 0) throw ParameterError("negative adaptation gap");

    const Matrix logits_local = head_logits(phi_local, mixed.z);
    const Matrix logits_global = head_logits(phi_global, mixed.z);
    const Scalar mean_kl = kl_divergence_columns(softmax_temperature(logits_local, cfg.t_kd),
                                                 softmax_temperature(logits_global, cfg.t_kd))
                               .mean();

    AlphaRecord best{client_id, 0.0, delta, round};
    Scalar best_j = std::numeric_limits<Scalar>::infinity();
    for (int k = 0; k <= 100; ++k) {
        const Scalar alpha = static_cast<Scalar>(k) / 100.0;
        const Matrix logits = alpha * logits_local + (1.0 - alpha) * logits_global;
        const Scalar j = cross_entropy(logits, mixed.y) +
                         cfg.beta_reg * static_cast<Scalar>(delta) * alpha * alpha * mean_kl;
        if (j <= best_j) {  // <= keeps the larger alpha on ties
            best_j = j;
            best.alpha = alpha;
        }
    }
    return best;
}

}  // namespace fedsplit
