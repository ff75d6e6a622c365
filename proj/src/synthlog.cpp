#include "procgt/synthlog.hpp"

#include <cmath>

#include "procgt/errors.hpp"
#include "procgt/rng.hpp"
#include "procgt/timeutil.hpp"

namespace procgt {

EventLog make_synthetic_log(const SynthConfig& config) {
    if (config.traces < 2 || config.trace_length < 3)
        throw Error(ErrorKind::Usage, "need at least 2 traces of at least 3 events");
    EventLog log;
    log.schema["amount"] = {AttrKind::Numeric, AttrScope::CaseLevel};
    Rng rng(derive_seed(config.seed, "synthlog"));
    const TimestampMs origin = parse_iso8601("2024-01-01T00:00:00Z").value();

    for (std::size_t i = 0; i < config.traces; ++i) {
        const bool fast = i % 2 == 0;
        const double gap = fast ? config.fast_gap_seconds : config.slow_gap_seconds;
        Trace trace;
        char id[16];
        std::snprintf(id, sizeof(id), "case-%04zu", i);
        trace.case_id = id;
        const TimestampMs start =
            origin + static_cast<TimestampMs>(std::llround(
                         static_cast<double>(i) * config.start_stagger_seconds * 1000.0));
        // an attribute with no bearing on the target, to exercise encoding
        const double amount = std::floor(rng.uniform(10.0, 1000.0));
        for (std::size_t step = 0; step < config.trace_length; ++step) {
            Event e;
            e.case_id = trace.case_id;
            if (step == 0)
                e.activity = "Register";
            else if (step + 1 == config.trace_length)
                e.activity = fast ? "CloseFast" : "CloseSlow";
            else
                e.activity = (fast ? "Fast" : "Slow") + std::to_string(step);
            e.timestamp = start + static_cast<TimestampMs>(std::llround(
                                      static_cast<double>(step) * gap * 1000.0));
            e.attrs["amount"] = amount;
            trace.events.push_back(std::move(e));
        }
        log.traces.push_back(std::move(trace));
    }
    return log;
}

} // namespace procgt
