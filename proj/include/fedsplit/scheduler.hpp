#pragma once

#include "fedsplit/nn.hpp"
#include "fedsplit/personalization.hpp"
#include "fedsplit/types.hpp"

#include <optional>
#include <vector>

namespace fedsplit {

// Server-side adaptive head-synchronization state. `tau` is the current
// aggregation interval, `s` counts rounds since the last head aggregation, and
// a freshly aggregated head waits in `tmp_head` for exactly one broadcast.
struct ApaState {
    int tau = 5;
    int s = 0;
    Scalar alpha_prev_mean = 0.0;
    std::optional<Layer> tmp_head;
    int tau_min = 1;
    int tau_max = 50;
};

void validate(const ApaState& state);

Scalar mean_alpha(const std::vector<AlphaRecord>& records);

// Shortens tau by one when clients leaned further local than last time
// (mean alpha rose), lengthens it when they leaned global, clips to
// [tau_min, tau_max], and records the new reference mean. Exact float
// comparison on purpose: equality keeps tau unchanged.
int update_interval(ApaState& state, Scalar alpha_mean);

// Advances the round counter toward the next head aggregation. Returns true
// (and resets the counter) when the interval is reached.
bool tick_and_maybe_trigger(ApaState& state);

// Buffers an aggregated head for the next broadcast. Stashing over an
// undelivered head would silently drop an aggregation, so it is rejected.
void stash_head(ApaState& state, Layer head);

// Hands out the buffered head (if any) and clears the buffer — each stashed
// head is released at most once.
std::optional<Layer> release_head(ApaState& state);

}  // namespace fedsplit
