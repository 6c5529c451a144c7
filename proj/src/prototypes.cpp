#include "fedsplit/prototypes.hpp"

#include "fedsplit/split_model.hpp"

#include <algorithm>
#include <ostream>
#include <string>

namespace fedsplit {

std::vector<LocalClassStats> compute_local_prototypes(const LayerStack& theta,
                                                      const ClientShard& shard) {
    std::vector<LocalClassStats> out;
    if (shard.train.size() == 0) return out;
    const Matrix z = embed(theta, shard.train.x);
    std::map<int, LocalClassStats> acc;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const int label = shard.train.y[static_cast<std::size_t>(j)];
        auto [it, fresh] = acc.try_emplace(label);
        if (fresh) {
            it->second.label = label;
            it->second.embedding_sum = Vector::Zero(z.rows());
            it->second.embedding_sq_sum = Vector::Zero(z.rows());
        }
        ++it->second.count;
        it->second.embedding_sum += z.col(j);
        it->second.embedding_sq_sum += z.col(j).cwiseAbs2();
    }
    out.reserve(acc.size());
    for (auto& [label, stats] : acc) out.push_back(std::move(stats));
    return out;
}

std::vector<GlobalPrototype> aggregate_global_prototypes(
    const std::map<int, std::vector<LocalClassStats>>& uploads,
    const std::vector<int>& participants) {
    for (const auto& [client, stats] : uploads)
        if (std::find(participants.begin(), participants.end(), client) == participants.end())
            throw ContractError("prototype upload from client " + std::to_string(client) +
                                " outside the participant set");

    std::map<int, GlobalPrototype> acc;
    for (const auto& [client, stats] : uploads) {
        for (const LocalClassStats& s : stats) {
            if (s.count < 1) throw ContractError("uploaded class stats with zero count");
            auto [it, fresh] = acc.try_emplace(s.label);
            if (fresh) {
                it->second.label = s.label;
                it->second.prototype = Vector::Zero(s.embedding_sum.size());
            } else if (it->second.prototype.size() != s.embedding_sum.size()) {
                throw ContractError("embedding dimension differs across clients for class " +
                                    std::to_string(s.label));
            }
            it->second.prototype += s.prototype();
            ++it->second.contributing_clients;
        }
    }
    std::vector<GlobalPrototype> out;
    out.reserve(acc.size());
    for (auto& [label, proto] : acc) {
        proto.prototype /= static_cast<Scalar>(proto.contributing_clients);
        out.push_back(std::move(proto));
    }
    return out;
}

std::vector<GaussianClassStats> estimate_gaussian_stats(
    const std::map<int, std::vector<LocalClassStats>>& uploads,
    const std::vector<GlobalPrototype>& global_prototypes) {
    constexpr Scalar kNegativeSlack = -1e-9;

    std::vector<GaussianClassStats> out;
    out.reserve(global_prototypes.size());
    for (const GlobalPrototype& proto : global_prototypes) {
        Eigen::Index total = 0;
        Vector sum = Vector::Zero(proto.prototype.size());
        Vector sq_sum = Vector::Zero(proto.prototype.size());
        for (const auto& [client, stats] : uploads) {
            for (const LocalClassStats& s : stats) {
                if (s.label != proto.label) continue;
                if (s.embedding_sum.size() != sum.size())
                    throw ContractError("embedding dimension mismatch in uploads for class " +
                                        std::to_string(s.label));
                total += s.count;
                sum += s.embedding_sum;
                sq_sum += s.embedding_sq_sum;
            }
        }
        if (total < 1)
            throw ContractError("no uploads back the published prototype for class " +
                                std::to_string(proto.label));

        GaussianClassStats g;
        g.label = proto.label;
        g.mu = proto.prototype;
        const Scalar n = static_cast<Scalar>(total);
        const Vector pooled_mean = sum / n;
        Vector var = sq_sum / n - pooled_mean.cwiseAbs2();
        for (Eigen::Index d = 0; d < var.size(); ++d) {
            if (var(d) < kNegativeSlack)
                throw ContractError("negative pooled variance for class " +
                                    std::to_string(proto.label) + " (corrupted statistics)");
            if (var(d) < 0.0) var(d) = 0.0;
        }
        g.sigma_diag = total == 1 ? Vector::Zero(var.size()) : std::move(var);
        out.push_back(std::move(g));
    }
    return out;
}

std::map<int, GaussianClassStats> retain_stats(const std::vector<GaussianClassStats>& current,
                                               const std::map<int, GaussianClassStats>& previous) {
    std::map<int, GaussianClassStats> merged = previous;
    for (const GaussianClassStats& s : current) merged[s.label] = s;
    return merged;
}

std::map<int, Vector> prototype_map(const std::map<int, GaussianClassStats>& stats) {
    std::map<int, Vector> out;
    for (const auto& [label, s] : stats) out.emplace(label, s.mu);
    return out;
}

std::set<int> available_classes(const std::map<int, GaussianClassStats>& stats) {
    std::set<int> out;
    for (const auto& [label, s] : stats) out.insert(label);
    return out;
}

void export_stats_snapshot(std::ostream& out, const std::map<int, GaussianClassStats>& stats,
                           const std::map<int, int>& contributing) {
    out.precision(17);
    for (const auto& [label, s] : stats) {
        const auto it = contributing.find(label);
        out << label << ',' << (it == contributing.end() ? 0 : it->second);
        for (Eigen::Index d = 0; d < s.mu.size(); ++d) out << ',' << s.mu(d);
        for (Eigen::Index d = 0; d < s.sigma_diag.size(); ++d) out << ',' << s.sigma_diag(d);
        out << '\n';
    }
}

}  // namespace fedsplit
