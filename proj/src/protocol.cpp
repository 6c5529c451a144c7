#include "fedsplit/protocol.hpp"

#include "fedsplit/serialize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace fedsplit {

namespace {

constexpr Scalar kNaN = std::numeric_limits<Scalar>::quiet_NaN();

std::uint64_t param_doubles(const LayerStack& stack) {
    std::uint64_t n = 0;
    for (const Layer& l : stack) n += static_cast<std::uint64_t>(l.W.size() + l.b.size());
    return n;
}

std::uint64_t param_doubles(const Layer& l) {
    return static_cast<std::uint64_t>(l.W.size() + l.b.size());
}

std::uint64_t stats_doubles(const std::map<int, GaussianClassStats>& stats) {
    std::uint64_t n = 0;
    for (const auto& [label, s] : stats) n += static_cast<std::uint64_t>(s.mu.size() + s.sigma_diag.size());
    return n;
}

std::uint64_t stats_doubles(const std::vector<LocalClassStats>& stats) {
    std::uint64_t n = 0;
    for (const LocalClassStats& s : stats)
        n += static_cast<std::uint64_t>(s.embedding_sum.size() + s.embedding_sq_sum.size()) + 1;
    return n;
}

void log_step(std::vector<std::string>* trace, const std::string& entry) {
    if (trace) trace->push_back(entry);
}

// Runs `epochs` passes over n samples in shuffled order, invoking `step` with
// each index batch. One fresh RNG per epoch keeps batch order independent of
// everything else.
template <typename RngFor, typename Step>
void run_epochs(Eigen::Index n, int epochs, Eigen::Index batch_size, RngFor rng_for_epoch,
                Step step) {
    if (batch_size < 1) throw ParameterError("batch size must be at least 1");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < epochs; ++e) {
        std::mt19937_64 rng = rng_for_epoch(e);
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < n; start += batch_size) {
            const Eigen::Index len = std::min(batch_size, n - start);
            step(std::vector<Eigen::Index>(order.begin() + start, order.begin() + start + len));
        }
    }
}

Matrix gather_cols(const Matrix& m, const std::vector<Eigen::Index>& idx) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(idx[j]);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<Eigen::Index>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] = y[static_cast<std::size_t>(idx[j])];
    return out;
}

SyntheticSamples draw_synthetic(const BroadcastPayload& payload, const ClientShard& shard,
                                Scalar synthetic_ratio, Scalar label_smoothing,
                                bool normalize_gamma, std::mt19937_64& rng) {
    const GammaFn gamma =
        make_variance_scale_fn(shard.q, normalize_gamma, available_classes(payload.stats));
    return sample_global_embeddings(payload.stats, shard.q, shard.train.size(), synthetic_ratio,
                                    gamma, rng, label_smoothing);
}

}  // namespace

void validate(const BroadcastPayload& payload) {
    if (payload.prototypes.size() != payload.stats.size())
        throw ContractError("broadcast prototypes and statistics disagree on class set");
    for (const auto& [label, proto] : payload.prototypes) {
        const auto it = payload.stats.find(label);
        if (it == payload.stats.end())
            throw ContractError("broadcast prototype for class " + std::to_string(label) +
                                " has no matching statistics");
        if (it->second.mu.size() != proto.size())
            throw ContractError("broadcast prototype/statistics dimension mismatch");
    }
}

std::vector<int> select_participants(int num_clients, Scalar fraction, int round,
                                     std::uint64_t seed) {
    if (num_clients < 1) throw ParameterError("need at least one client");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ParameterError("participation fraction must lie in (0, 1]");
    Eigen::Index m = static_cast<Eigen::Index>(std::llround(fraction * num_clients));
    m = std::clamp<Eigen::Index>(m, 1, num_clients);
    std::vector<int> ids(static_cast<std::size_t>(num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    std::mt19937_64 rng = substream(seed, Stream::participation, {static_cast<std::uint64_t>(round)});
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<std::size_t>(m));
    std::sort(ids.begin(), ids.end());
    return ids;
}

LayerStack aggregate_representations(const std::vector<UploadPayload>& uploads) {
    if (uploads.empty()) throw ContractError("representation aggregation with no uploads");
    Scalar total = 0.0;
    const LayerStack* shape_ref = nullptr;
    for (const UploadPayload& u : uploads) {
        if (u.theta_new.empty()) throw ContractError("upload without representation parameters");
        if (!shape_ref) shape_ref = &u.theta_new;
        else {
            if (shape_ref->size() != u.theta_new.size())
                throw ContractError("uploaded representation depth mismatch");
            for (std::size_t i = 0; i < shape_ref->size(); ++i)
                if ((*shape_ref)[i].W.rows() != u.theta_new[i].W.rows() ||
                    (*shape_ref)[i].W.cols() != u.theta_new[i].W.cols())
                    throw ContractError("uploaded representation shape mismatch");
        }
        total += static_cast<Scalar>(u.train_size);
    }
    if (total <= 0.0) throw ContractError("representation aggregation with zero total data size");

    LayerStack out = *shape_ref;
    for (Layer& l : out) {
        l.W.setZero();
        l.b.setZero();
    }
    for (const UploadPayload& u : uploads) {
        const Scalar w = static_cast<Scalar>(u.train_size) / total;
        if (w == 0.0) continue;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i].W += w * u.theta_new[i].W;
            out[i].b += w * u.theta_new[i].b;
        }
    }
    return out;
}

Layer aggregate_heads(const std::vector<UploadPayload>& uploads, HeadWeighting weighting) {
    if (uploads.empty()) throw ContractError("head aggregation with no uploads");
    Scalar total = 0.0;
    const Layer* shape_ref = nullptr;
    for (const UploadPayload& u : uploads) {
        if (u.phi_new.W.size() == 0) throw ContractError("upload without head parameters");
        if (!shape_ref) shape_ref = &u.phi_new;
        else if (shape_ref->W.rows() != u.phi_new.W.rows() ||
                 shape_ref->W.cols() != u.phi_new.W.cols())
            throw ContractError("uploaded head shape mismatch");
        total += weighting == HeadWeighting::uniform ? 1.0 : static_cast<Scalar>(u.train_size);
    }
    if (total <= 0.0) throw ContractError("head aggregation with zero total weight");

    Layer out;
    out.W = Matrix::Zero(shape_ref->W.rows(), shape_ref->W.cols());
    out.b = Vector::Zero(shape_ref->b.size());
    for (const UploadPayload& u : uploads) {
        const Scalar w =
            (weighting == HeadWeighting::uniform ? 1.0 : static_cast<Scalar>(u.train_size)) / total;
        if (w == 0.0) continue;
        out.W += w * u.phi_new.W;
        out.b += w * u.phi_new.b;
    }
    return out;
}

EvalResult evaluate(const std::vector<ClientState>& clients,
                    const std::vector<ClientShard>& shards) {
    if (clients.size() != shards.size()) throw ShapeError("client/shard count mismatch");
    EvalResult out;
    out.per_client = Vector::Constant(static_cast<Eigen::Index>(clients.size()), kNaN);
    Scalar sum = 0.0;
    Eigen::Index counted = 0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const LabeledDataset& test = shards[i].test;
        if (test.size() == 0) {
            out.skipped.push_back(clients[i].client_id);
            continue;
        }
        const Matrix logits = head_logits(clients[i].model.phi, embed(clients[i].model.theta, test.x));
        const Scalar acc = accuracy(logits, test.y);
        out.per_client(static_cast<Eigen::Index>(i)) = acc;
        sum += acc;
        ++counted;
    }
    out.mean = counted > 0 ? sum / static_cast<Scalar>(counted) : kNaN;
    return out;
}

Vector labelwise_accuracy(const ClientState& client, const LabeledDataset& test) {
    validate(test);
    Vector acc = Vector::Constant(test.num_classes, kNaN);
    if (test.size() == 0) return acc;
    const Matrix logits = head_logits(client.model.phi, embed(client.model.theta, test.x));
    const std::vector<int> pred = predict_labels(logits);
    std::vector<Eigen::Index> total(static_cast<std::size_t>(test.num_classes), 0);
    std::vector<Eigen::Index> hits(static_cast<std::size_t>(test.num_classes), 0);
    for (std::size_t j = 0; j < pred.size(); ++j) {
        ++total[static_cast<std::size_t>(test.y[j])];
        if (pred[j] == test.y[j]) ++hits[static_cast<std::size_t>(test.y[j])];
    }
    for (int l = 0; l < test.num_classes; ++l)
        if (total[static_cast<std::size_t>(l)] > 0)
            acc(l) = static_cast<Scalar>(hits[static_cast<std::size_t>(l)]) /
                     static_cast<Scalar>(total[static_cast<std::size_t>(l)]);
    return acc;
}

UploadPayload client_round(ClientState& client, const ClientShard& shard,
                           const BroadcastPayload& payload, const StrategySpec& spec,
                           const TrainConfig& cfg, std::uint64_t master_seed,
                           Scalar synthetic_ratio, Scalar label_smoothing, bool normalize_gamma,
                           std::vector<std::string>* trace) {
    validate(spec);
    const int t = payload.round;
    const std::uint64_t cid = static_cast<std::uint64_t>(client.client_id);
    const std::uint64_t rd = static_cast<std::uint64_t>(t);
    auto step = [&](const char* name) {
        log_step(trace, "client" + std::to_string(client.client_id) + ":" + name);
    };

    // (a) adopt the broadcast representation
    if (spec.share_repr) {
        if (payload.theta_bar.empty())
            throw ContractError("representation-sharing strategy received an empty broadcast");
        if (output_dim(payload.theta_bar) != client.model.phi.W.cols())
            throw ContractError("broadcast representation does not match the client head");
        client.model.theta = payload.theta_bar;
        step("adopt_repr");
    }
    if (payload.head && !spec.share_head)
        throw ContractError("head delivered to a strategy that does not share heads");

    UploadPayload upload;
    upload.client_id = client.client_id;
    upload.train_size = shard.train.size();
    const bool empty_train = shard.train.size() == 0;

    // (b) adapt to a delivered aggregated head
    if (payload.head && !empty_train) {
        if (payload.head->W.rows() != client.model.phi.W.rows() ||
            payload.head->W.cols() != client.model.phi.W.cols())
            throw ContractError("delivered head does not match the client head shape");
        const int delta = adaptation_gap(t, client.adaptation);
        AlphaRecord rec;
        if (spec.fixed_alpha) {
            rec = AlphaRecord{client.client_id, *spec.fixed_alpha, delta, t};
        } else {
            std::mt19937_64 rng = substream(master_seed, Stream::synth_alpha, {cid, rd});
            SyntheticSamples synth;
            if (spec.use_gaussian_synth)
                synth = draw_synthetic(payload, shard, synthetic_ratio, label_smoothing,
                                       normalize_gamma, rng);
            const MixedDataset mixed = build_mixed_dataset(client.model.theta, shard, synth);
            rec = optimize_alpha(client.model.phi, *payload.head, mixed, delta, cfg,
                                 client.client_id, t);
        }
        client.model.phi = mix_heads(client.model.phi, *payload.head, rec.alpha);
        client.adaptation.t_last = t;
        upload.alpha = rec;
        step("adapt_head");
    }

    if (!empty_train) {
        if (spec.local_update == LocalUpdate::decoupled) {
            // (c) build the mixed embedding set under the frozen representation
            std::mt19937_64 rng = substream(master_seed, Stream::synth_train, {cid, rd});
            SyntheticSamples synth;
            if (spec.use_gaussian_synth)
                synth = draw_synthetic(payload, shard, synthetic_ratio, label_smoothing,
                                       normalize_gamma, rng);
            const MixedDataset mixed = build_mixed_dataset(client.model.theta, shard, synth);
            step("build_mixed");

            // (d) head epochs with the representation frozen
            run_epochs(
                mixed.size(), cfg.local_epochs, cfg.batch_size,
                [&](int e) {
                    return substream(master_seed, Stream::batch_head,
                                     {cid, rd, static_cast<std::uint64_t>(e)});
                },
                [&](const std::vector<Eigen::Index>& idx) {
                    train_head_step(client.model, gather_cols(mixed.z, idx),
                                    gather_labels(mixed.y, idx), cfg);
                });
            step("train_head");

            // (e) representation epochs with the head frozen
            const std::map<int, Vector> protos =
                spec.use_prototype_reg ? payload.prototypes : std::map<int, Vector>{};
            const std::set<int> available =
                spec.use_prototype_reg ? available_classes(payload.stats) : std::set<int>{};
            run_epochs(
                shard.train.size(), cfg.local_epochs, cfg.batch_size,
                [&](int e) {
                    return substream(master_seed, Stream::batch_repr,
                                     {cid, rd, static_cast<std::uint64_t>(e)});
                },
                [&](const std::vector<Eigen::Index>& idx) {
                    train_repr_step(client.model, gather_cols(shard.train.x, idx),
                                    gather_labels(shard.train.y, idx), protos, available, cfg);
                });
            step("train_repr");
        } else {
            run_epochs(
                shard.train.size(), cfg.local_epochs, cfg.batch_size,
                [&](int e) {
                    return substream(master_seed, Stream::batch_joint,
                                     {cid, rd, static_cast<std::uint64_t>(e)});
                },
                [&](const std::vector<Eigen::Index>& idx) {
                    train_joint_step(client.model, gather_cols(shard.train.x, idx),
                                     gather_labels(shard.train.y, idx), cfg);
                });
            step("train_joint");
        }

        // (f) refreshed class statistics under the updated representation
        if (spec.shares_statistics()) {
            upload.local_stats = compute_local_prototypes(client.model.theta, shard);
            step("compute_stats");
        }
    }

    // (g) upload what the strategy shares
    if (spec.share_repr) upload.theta_new = client.model.theta;
    if (spec.share_head) upload.phi_new = client.model.phi;
    step("upload");
    return upload;
}

RoundLog server_round(ServerState& server, std::vector<ClientState>& clients,
                      const std::vector<ClientShard>& shards, const StrategySpec& spec,
                      const TrainConfig& cfg, std::uint64_t master_seed, Scalar participation,
                      Scalar synthetic_ratio, Scalar label_smoothing, bool normalize_gamma,
                      HeadWeighting head_weighting, std::vector<std::string>* trace) {
    validate(spec);
    if (clients.size() != shards.size()) throw ShapeError("client/shard count mismatch");
    const auto t0 = std::chrono::steady_clock::now();
    const int t = server.round;
    auto step = [&](const std::string& name) { log_step(trace, "server:" + name); };

    const std::vector<int> participants =
        select_participants(static_cast<int>(clients.size()), participation, t, master_seed);
    if (participants.empty()) throw ContractError("round with no participants");
    step("select");

    const bool syncs_heads = spec.share_head && spec.head_sync != HeadSync::never;
    BroadcastPayload payload;
    payload.round = t;
    if (spec.share_repr) payload.theta_bar = server.theta_bar;
    if (spec.shares_statistics()) {
        payload.stats = server.stats;
        payload.prototypes = prototype_map(server.stats);
    }
    bool delivered = false;
    if (syncs_heads) {
        std::optional<Layer> head = release_head(server.apa);
        if (head) {
            payload.head = std::move(*head);
            delivered = true;
            step("release_head");
        }
    }
    validate(payload);
    step("broadcast");

    const std::uint64_t fanout = static_cast<std::uint64_t>(participants.size());
    server.traffic.broadcast_param_doubles +=
        fanout * (param_doubles(payload.theta_bar) +
                  (payload.head ? param_doubles(*payload.head) : 0));
    server.traffic.stats_doubles += fanout * stats_doubles(payload.stats);

    std::vector<UploadPayload> uploads;
    uploads.reserve(participants.size());
    for (int id : participants) {
        uploads.push_back(client_round(clients[static_cast<std::size_t>(id)],
                                       shards[static_cast<std::size_t>(id)], payload, spec, cfg,
                                       master_seed, synthetic_ratio, label_smoothing,
                                       normalize_gamma, trace));
        server.traffic.upload_param_doubles +=
            param_doubles(uploads.back().theta_new) + param_doubles(uploads.back().phi_new);
        server.traffic.stats_doubles += stats_doubles(uploads.back().local_stats);
    }
    step("collect");

    if (spec.share_repr) {
        server.theta_bar = aggregate_representations(uploads);
        step("aggregate_repr");
    }
    if (spec.shares_statistics()) {
        std::map<int, std::vector<LocalClassStats>> stat_uploads;
        for (const UploadPayload& u : uploads)
            if (!u.local_stats.empty()) stat_uploads.emplace(u.client_id, u.local_stats);
        if (!stat_uploads.empty()) {
            const std::vector<GlobalPrototype> protos =
                aggregate_global_prototypes(stat_uploads, participants);
            server.stats = retain_stats(estimate_gaussian_stats(stat_uploads, protos), server.stats);
            step("aggregate_stats");
        }
    }

    RoundLog rl;
    rl.round = t;
    rl.participants = participants;
    rl.head_delivered = delivered;
    if (syncs_heads) {
        if (delivered) {
            std::vector<AlphaRecord> records;
            for (const UploadPayload& u : uploads)
                if (u.alpha) records.push_back(*u.alpha);
            if (!records.empty()) {
                const Scalar am = mean_alpha(records);
                rl.alpha_mean = am;
                if (spec.head_sync == HeadSync::apa) {
                    update_interval(server.apa, am);
                    step("interval_update");
                }
            }
            for (const UploadPayload& u : uploads)
                if (u.alpha) {
                    rl.alphas[u.client_id] = u.alpha->alpha;
                    rl.deltas[u.client_id] = u.alpha->delta;
                }
        }
        const bool triggered = tick_and_maybe_trigger(server.apa);
        step("tick");
        if (triggered) {
            stash_head(server.apa, aggregate_heads(uploads, head_weighting));
            rl.head_aggregated = true;
            step("stash_head");
        }
    }
    rl.tau = server.apa.tau;
    rl.s = server.apa.s;

    const EvalResult ev = evaluate(clients, shards);
    rl.per_client_acc = ev.per_client;
    rl.mean_acc = ev.mean;
    server.round = t + 1;
    rl.wall_seconds =
        std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t0).count();
    return rl;
}

void finetune_clients(std::vector<ClientState>& clients, const std::vector<ClientShard>& shards,
                      const TrainConfig& cfg, int epochs, std::uint64_t master_seed) {
    if (epochs < 1) throw ParameterError("finetune epochs must be at least 1");
    if (clients.size() != shards.size()) throw ShapeError("client/shard count mismatch");
    for (std::size_t i = 0; i < clients.size(); ++i) {
        if (shards[i].train.size() == 0) continue;
        const std::uint64_t cid = static_cast<std::uint64_t>(clients[i].client_id);
        run_epochs(
            shards[i].train.size(), epochs, cfg.batch_size,
            [&](int e) {
                return substream(master_seed, Stream::finetune, {cid, static_cast<std::uint64_t>(e)});
            },
            [&](const std::vector<Eigen::Index>& idx) {
                train_joint_step(clients[i].model, gather_cols(shards[i].train.x, idx),
                                 gather_labels(shards[i].train.y, idx), cfg);
            });
    }
}

void save_checkpoint(const ServerState& server, const std::vector<ClientState>& clients,
                     const std::string& path) {
    ByteWriter w;
    w.u64(0x46534B43504E5431ULL);  // checkpoint magic
    w.u64(static_cast<std::uint64_t>(server.round));
    w.stack(server.theta_bar);
    w.u64(server.stats.size());
    for (const auto& [label, s] : server.stats) {
        w.u64(static_cast<std::uint64_t>(label));
        w.vec(s.mu);
        w.vec(s.sigma_diag);
    }
    w.u64(static_cast<std::uint64_t>(server.apa.tau));
    w.u64(static_cast<std::uint64_t>(server.apa.s));
    w.f64(server.apa.alpha_prev_mean);
    w.u64(server.apa.tmp_head.has_value() ? 1 : 0);
    if (server.apa.tmp_head) w.layer(*server.apa.tmp_head);
    w.u64(static_cast<std::uint64_t>(server.apa.tau_min));
    w.u64(static_cast<std::uint64_t>(server.apa.tau_max));
    w.u64(server.traffic.broadcast_param_doubles);
    w.u64(server.traffic.upload_param_doubles);
    w.u64(server.traffic.stats_doubles);
    w.u64(clients.size());
    for (const ClientState& c : clients) {
        w.u64(static_cast<std::uint64_t>(c.client_id));
        w.model(c.model);
        w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(c.adaptation.t_last)));
    }
    write_file(w.bytes(), path);
}

void load_checkpoint(const std::string& path, ServerState& server,
                     std::vector<ClientState>& clients) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    ByteReader r(bytes);
    if (r.u64() != 0x46534B43504E5431ULL) throw IoError(path + ": not a checkpoint file");
    server = ServerState{};
    server.round = static_cast<int>(r.u64());
    server.theta_bar = r.stack();
    const std::uint64_t n_stats = r.u64();
    for (std::uint64_t i = 0; i < n_stats; ++i) {
        GaussianClassStats s;
        s.label = static_cast<int>(r.u64());
        s.mu = r.vec();
        s.sigma_diag = r.vec();
        server.stats.emplace(s.label, std::move(s));
    }
    server.apa.tau = static_cast<int>(r.u64());
    server.apa.s = static_cast<int>(r.u64());
    server.apa.alpha_prev_mean = r.f64();
    if (r.u64() == 1) server.apa.tmp_head = r.layer();
    server.apa.tau_min = static_cast<int>(r.u64());
    server.apa.tau_max = static_cast<int>(r.u64());
    server.traffic.broadcast_param_doubles = r.u64();
    server.traffic.upload_param_doubles = r.u64();
    server.traffic.stats_doubles = r.u64();
    const std::uint64_t n_clients = r.u64();
    clients.clear();
    clients.reserve(n_clients);
    for (std::uint64_t i = 0; i < n_clients; ++i) {
        ClientState c;
        c.client_id = static_cast<int>(r.u64());
        c.model = r.model();
        c.adaptation.t_last = static_cast<int>(static_cast<std::int64_t>(r.u64()));
        clients.push_back(std::move(c));
    }
    if (!r.exhausted()) throw IoError(path + ": trailing bytes after checkpoint payload");
}

}  // namespace fedsplit
