#include "fedsplit/scheduler.hpp"

#include <algorithm>
#include <string>

namespace fedsplit {

void validate(const ApaState& state) {
    if (state.tau_min < 1) throw ParameterError("tau_min must be at least 1");
    if (state.tau_max < state.tau_min) throw ParameterError("tau_max must be >= tau_min");
    if (state.tau < state.tau_min || state.tau > state.tau_max)
        throw ParameterError("tau " + std::to_string(state.tau) + " outside [" +
                             std::to_string(state.tau_min) + ", " + std::to_string(state.tau_max) +
                             "]");
    if (state.s < 0) throw ParameterError("negative round counter");
}

Scalar mean_alpha(const std::vector<AlphaRecord>& records) {
    if (records.empty()) throw ContractError("mean_alpha over no records");
    Scalar sum = 0.0;
    for (const AlphaRecord& r : records) {
        if (r.alpha < 0.0 || r.alpha > 1.0) throw ContractError("alpha record outside [0, 1]");
        sum += r.alpha;
    }
    return sum / static_cast<Scalar>(records.size());
}

int update_interval(ApaState& state, Scalar alpha_mean) {
    validate(state);
    int tau = state.tau;
    if (alpha_mean > state.alpha_prev_mean) --tau;
    else if (alpha_mean < state.alpha_prev_mean) ++tau;
    state.tau = std::clamp(tau, state.tau_min, state.tau_max);
    state.alpha_prev_mean = alpha_mean;
    return state.tau;
}

bool tick_and_maybe_trigger(ApaState& state) {
    validate(state);
    ++state.s;
    if (state.s >= state.tau) {
        state.s = 0;
        return true;
    }
    return false;
}

void stash_head(ApaState& state, Layer head) {
    if (state.tmp_head.has_value())
        throw ContractError("stashing an aggregated head over an undelivered one");
    state.tmp_head = std::move(head);
}

std::optional<Layer> release_head(ApaState& state) {
    std::optional<Layer> out = std::move(state.tmp_head);
    state.tmp_head.reset();
    return out;
}

}  // namespace fedsplit
