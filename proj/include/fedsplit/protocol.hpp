#pragma once

#include "fedsplit/data.hpp"
#include "fedsplit/personalization.hpp"
#include "fedsplit/prototypes.hpp"
#include "fedsplit/scheduler.hpp"
#include "fedsplit/split_model.hpp"
#include "fedsplit/strategy.hpp"
#include "fedsplit/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedsplit {

// Everything the server sends down at the start of a round. `theta_bar` is
// empty when representations are not shared; `head` appears exactly in the
// round after a head aggregation.
struct BroadcastPayload {
    int round = 0;
    LayerStack theta_bar;
    std::map<int, Vector> prototypes;
    std::map<int, GaussianClassStats> stats;
    std::optional<Layer> head;
};

void validate(const BroadcastPayload& payload);

// Everything one client sends back. Blocks the strategy does not share stay
// empty. `alpha` is present exactly when a head arrived this round and the
// client could adapt to it.
struct UploadPayload {
    int client_id = -1;
    LayerStack theta_new;
    Layer phi_new;
    std::vector<LocalClassStats> local_stats;
    std::optional<AlphaRecord> alpha;
    Eigen::Index train_size = 0;
};

struct ClientState {
    int client_id = -1;
    SplitModel model;
    AdaptationState adaptation;
};

// Cumulative parameter traffic in 8-byte words, for audits (a strategy that
// shares nothing must move zero parameter doubles in either direction).
struct TrafficAudit {
    std::uint64_t broadcast_param_doubles = 0;
    std::uint64_t upload_param_doubles = 0;
    std::uint64_t stats_doubles = 0;
};

struct ServerState {
    LayerStack theta_bar;
    std::map<int, GaussianClassStats> stats;
    ApaState apa;
    int round = 0;
    TrafficAudit traffic;
};

// Metrics emitted once per round (and once for the round-0 evaluation of the
// initial models). `wall_seconds` is informational and excluded from
// serialized metrics so reruns stay byte-identical.
struct RoundLog {
    int round = 0;
    Vector per_client_acc;  // NaN for clients with empty test sets
    Scalar mean_acc = 0.0;
    int tau = 0;
    int s = 0;
    std::optional<Scalar> alpha_mean;
    std::map<int, Scalar> alphas;
    std::map<int, int> deltas;
    std::vector<int> participants;
    bool head_delivered = false;   // aggregated head went out with this broadcast
    bool head_aggregated = false;  // head aggregation triggered at the end of this round
    bool finetuned = false;
    Scalar wall_seconds = 0.0;
};

// Uniform draw of round(fraction * K) clients (at least 1), deterministic per
// (round, seed).
std::vector<int> select_participants(int num_clients, Scalar fraction, int round,
                                     std::uint64_t seed);

// Data-size-weighted elementwise mean of uploaded representations; uploads
// with no training data carry zero weight.
LayerStack aggregate_representations(const std::vector<UploadPayload>& uploads);

// Elementwise mean of uploaded heads, uniform or data-size-weighted.
Layer aggregate_heads(const std::vector<UploadPayload>& uploads, HeadWeighting weighting);

// Per-client test accuracy under each client's own model. Clients with empty
// test sets get NaN and are excluded from the unweighted mean.
struct EvalResult {
    Vector per_client;
    Scalar mean = 0.0;
    std::vector<int> skipped;
};

EvalResult evaluate(const std::vector<ClientState>& clients,
                    const std::vector<ClientShard>& shards);

// Per-label accuracy of one client's model on an arbitrary test set; labels
// absent from the test set come back as NaN (undefined, not zero).
Vector labelwise_accuracy(const ClientState& client, const LabeledDataset& test);

// One client's round: adopt the broadcast representation, adapt to a delivered
// head (gap, alpha, mix), build the mixed training set, train head then
// representation (or jointly, per strategy), recompute class statistics, and
// assemble the upload. `trace` (optional) records step names in execution
// order for audits.
UploadPayload client_round(ClientState& client, const ClientShard& shard,
                           const BroadcastPayload& payload, const StrategySpec& spec,
                           const TrainConfig& cfg, std::uint64_t master_seed,
                           Scalar synthetic_ratio, Scalar label_smoothing, bool normalize_gamma,
                           std::vector<std::string>* trace = nullptr);

// One full server round: select participants, broadcast (releasing any stashed
// head), run the participants, aggregate what the strategy shares, run the
// interval update when a head was delivered, advance the aggregation counter,
// and stash a freshly aggregated head for the next round.
RoundLog server_round(ServerState& server, std::vector<ClientState>& clients,
                      const std::vector<ClientShard>& shards, const StrategySpec& spec,
                      const TrainConfig& cfg, std::uint64_t master_seed, Scalar participation,
                      Scalar synthetic_ratio, Scalar label_smoothing, bool normalize_gamma,
                      HeadWeighting head_weighting, std::vector<std::string>* trace = nullptr);

// Local fine-tuning pass (joint updates on the client's own training data),
// used by strategies with post-round fine-tuning.
void finetune_clients(std::vector<ClientState>& clients, const std::vector<ClientShard>& shards,
                      const TrainConfig& cfg, int epochs, std::uint64_t master_seed);

// Round-checkpoint of the whole simulation (server stores + every client's
// model and adaptation state); loading resumes bit-identically because all
// randomness is keyed by (master seed, client, round).
void save_checkpoint(const ServerState& server, const std::vector<ClientState>& clients,
                     const std::string& path);
void load_checkpoint(const std::string& path, ServerState& server,
                     std::vector<ClientState>& clients);

}  // namespace fedsplit
