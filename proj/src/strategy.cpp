#include "fedsplit/strategy.hpp"

#include <stdexcept>

namespace fedsplit {

void validate(const StrategySpec& spec) {
    if (spec.name.empty()) throw ParameterError("strategy needs a name");
    if (spec.head_sync == HeadSync::apa && !spec.share_head)
        throw ParameterError("adaptive head sync requires head sharing");
    if (spec.head_sync != HeadSync::never && !spec.share_head)
        throw ParameterError("head sync mode set but heads are not shared");
    if (spec.fixed_alpha && spec.head_sync == HeadSync::never)
        throw ParameterError("fixed_alpha has no effect without head sync");
    if (spec.fixed_alpha && (*spec.fixed_alpha < 0.0 || *spec.fixed_alpha > 1.0))
        throw ParameterError("fixed_alpha must lie in [0, 1]");
    if (spec.head_sync == HeadSync::fixed_interval && spec.fixed_interval_tau < 1)
        throw ParameterError("fixed head-sync interval must be at least 1");
    if (spec.finetune_epochs && *spec.finetune_epochs < 1)
        throw ParameterError("finetune_epochs must be at least 1");
}

StrategySpec strategy_preset(const std::string& name) {
    StrategySpec s;
    s.name = name;
    if (name == "local") {
        s.head_sync = HeadSync::never;
        s.use_gaussian_synth = false;
        s.use_prototype_reg = false;
        s.share_repr = false;
        s.share_head = false;
        s.local_update = LocalUpdate::joint;
    } else if (name == "fedavg" || name == "fedavg_ft") {
        s.head_sync = HeadSync::every_round;
        s.use_gaussian_synth = false;
        s.use_prototype_reg = false;
        s.local_update = LocalUpdate::joint;
        s.fixed_alpha = 0.0;  // full replacement by the aggregated head
        if (name == "fedavg_ft") s.finetune_epochs = 25;
    } else if (name == "fedper" || name == "fedrep") {
        s.head_sync = HeadSync::never;
        s.use_gaussian_synth = false;
        s.use_prototype_reg = false;
        s.share_head = false;
        s.local_update = name == "fedper" ? LocalUpdate::joint : LocalUpdate::decoupled;
    } else if (name == "pgfedsplit") {
        // defaults already are the full method
    } else if (name == "pgfedsplit_no_apa") {
        s.head_sync = HeadSync::fixed_interval;
        s.fixed_interval_tau = 5;
    } else if (name == "pgfedsplit_no_gau") {
        s.use_gaussian_synth = false;
    } else if (name == "pgfedsplit_no_apa_gau") {
        s.head_sync = HeadSync::fixed_interval;
        s.fixed_interval_tau = 5;
        s.use_gaussian_synth = false;
    } else {
        throw ParameterError("unknown strategy '" + name + "'");
    }
    validate(s);
    return s;
}

const std::vector<std::string>& strategy_names() {
    static const std::vector<std::string> names = {
        "local",
        "fedavg",
        "fedavg_ft",
        "fedper",
        "fedrep",
        "pgfedsplit",
        "pgfedsplit_no_apa",
        "pgfedsplit_no_gau",
        "pgfedsplit_no_apa_gau",
    };
    return names;
}

std::string to_string(HeadSync sync) {
    switch (sync) {
        case HeadSync::never: return "never";
        case HeadSync::every_round: return "every_round";
        case HeadSync::fixed_interval: return "fixed_interval";
        case HeadSync::apa: return "apa";
    }
    throw ParameterError("unhandled head sync mode");
}

HeadSync head_sync_from_string(const std::string& s) {
    if (s == "never") return HeadSync::never;
    if (s == "every_round") return HeadSync::every_round;
    if (s == "fixed_interval") return HeadSync::fixed_interval;
    if (s == "apa") return HeadSync::apa;
    throw ParameterError("unknown head sync mode '" + s + "'");
}

std::string to_string(LocalUpdate mode) {
    return mode == LocalUpdate::joint ? "joint" : "decoupled";
}

LocalUpdate local_update_from_string(const std::string& s) {
    if (s == "joint") return LocalUpdate::joint;
    if (s == "decoupled") return LocalUpdate::decoupled;
    throw ParameterError("unknown local update mode '" + s + "'");
}

std::string to_string(HeadWeighting w) {
    return w == HeadWeighting::uniform ? "uniform" : "data_size";
}

HeadWeighting head_weighting_from_string(const std::string& s) {
    if (s == "uniform") return HeadWeighting::uniform;
    if (s == "data_size") return HeadWeighting::data_size;
    throw ParameterError("unknown head weighting '" + s + "'");
}

bool operator==(const StrategySpec& a, const StrategySpec& b) {
    return a.name == b.name && a.head_sync == b.head_sync &&
           a.fixed_interval_tau == b.fixed_interval_tau &&
           a.use_gaussian_synth == b.use_gaussian_synth &&
           a.use_prototype_reg == b.use_prototype_reg && a.share_repr == b.share_repr &&
           a.share_head == b.share_head && a.local_update == b.local_update &&
           a.fixed_alpha == b.fixed_alpha && a.finetune_epochs == b.finetune_epochs;
}

}  // namespace fedsplit
