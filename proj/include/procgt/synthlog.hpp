#pragma once

#include <cstdint>
#include <string>

#include "procgt/eventlog.hpp"

namespace procgt {

// Two-variant process for self-contained experiments: both variants share the
// first activity and length, but differ in their remaining activities and in
// the fixed gap between consecutive events. The remaining time after k events
// is therefore a deterministic function of (variant, k), which the graph
// structure reveals and a per-length mean cannot.
struct SynthConfig {
    std::size_t traces = 30;
    std::size_t trace_length = 6;
    double fast_gap_seconds = 100.0;
    double slow_gap_seconds = 2000.0;
    double start_stagger_seconds = 3600.0;
    std::uint64_t seed = 7;
};

EventLog make_synthetic_log(const SynthConfig& config);

} // namespace procgt
