#pragma once

#include "fedsplit/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fedsplit {

enum class HeadSync { never, every_round, fixed_interval, apa };

// How a client spends its local epochs: `joint` updates theta and phi together
// on plain cross-entropy; `decoupled` trains the head first (theta frozen),
// then the representation (phi frozen).
enum class LocalUpdate { joint, decoupled };

enum class HeadWeighting { uniform, data_size };

struct StrategySpec {
    std::string name = "pgfedsplit";
    HeadSync head_sync = HeadSync::apa;
    int fixed_interval_tau = 5;  // used when head_sync == fixed_interval
    bool use_gaussian_synth = true;
    bool use_prototype_reg = true;
    bool share_repr = true;
    bool share_head = true;
    LocalUpdate local_update = LocalUpdate::decoupled;
    std::optional<Scalar> fixed_alpha;   // bypasses the alpha optimizer
    std::optional<int> finetune_epochs;  // extra local epochs after the last round

    bool shares_statistics() const { return use_gaussian_synth || use_prototype_reg; }
};

void validate(const StrategySpec& spec);

// Named presets:
//   local        - no sharing at all, joint local training
//   fedavg       - share theta and phi every round, full head replacement
//   fedavg_ft    - fedavg plus 25 local fine-tuning epochs after the last round
//   fedper       - share theta only, joint local training
//   fedrep       - share theta only, decoupled local training
//   pgfedsplit   - split aggregation + adaptive head sync + synthetic-embedding
//                  head training + prototype-regularized representation
//   pgfedsplit_no_apa      - head interval fixed at 5 instead of adaptive
//   pgfedsplit_no_gau      - head trains on local embeddings only
//   pgfedsplit_no_apa_gau  - both of the above
StrategySpec strategy_preset(const std::string& name);

const std::vector<std::string>& strategy_names();

std::string to_string(HeadSync sync);
HeadSync head_sync_from_string(const std::string& s);
std::string to_string(LocalUpdate mode);
LocalUpdate local_update_from_string(const std::string& s);
std::string to_string(HeadWeighting w);
HeadWeighting head_weighting_from_string(const std::string& s);

bool operator==(const StrategySpec& a, const StrategySpec& b);

}  // namespace fedsplit
