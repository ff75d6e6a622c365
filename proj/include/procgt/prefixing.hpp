#ifndef PROCGT_PREFIXING_HPP
#define PROCGT_PREFIXING_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "procgt/eventlog.hpp"

namespace procgt {

// One prediction unit: the first k events of a trace plus the time still to
// run after event k. Events are referenced through the owning log.
struct EventPrefixRecord {
    std::string case_id;
    std::size_t trace_index = 0;
    std::size_t k = 2;
    double remaining_seconds = 0.0;

    std::span<const Event> events(const EventLog& log) const {
        return std::span<const Event>(log.traces[trace_index].events).first(k);
    }
};

// For each trace of length n emits records k = 2..n-1.
std::vector<EventPrefixRecord> build_prefixes(const EventLog& log);

enum class SplitMode { CrossValidation, Holdout };

struct SplitPlan {
    SplitMode mode = SplitMode::CrossValidation;
    // fold count under cv; training fraction under holdout
    double folds = 5;
    std::uint64_t seed = 0;
    double validation_fraction = 0.2;
    std::map<std::string, int> assignment; // case id -> fold (holdout: 0 train side, 1 test)

    int fold_count() const {
        return mode == SplitMode::CrossValidation ? static_cast<int>(folds) : 1;
    }
};

// Case-level split. cv: seeded shuffle, round-robin folds (sizes differ by
// at most 1). holdout: cases sorted by start time, the latest-starting
// (1 - ratio) share becomes the test side.
SplitPlan make_split(const EventLog& log, SplitMode mode, double folds, std::uint64_t seed,
                     double validation_fraction);

struct FoldSets {
    std::vector<EventPrefixRecord> train;
    std::vector<EventPrefixRecord> validation;
    std::vector<EventPrefixRecord> test;
};

// Routes records by their case assignment. Validation cases are carved out
// of the non-test cases with a shuffle seeded by (plan.seed, fold).
FoldSets materialize_fold(const std::vector<EventPrefixRecord>& records, const SplitPlan& plan,
                          int fold);

std::string split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const std::string& text);
void save_split_plan(const SplitPlan& plan, const std::string& path);
SplitPlan load_split_plan(const std::string& path);

} // namespace procgt

#endif
