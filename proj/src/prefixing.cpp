#include "procgt/prefixing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "procgt/errors.hpp"
#include "procgt/rng.hpp"

namespace procgt {

std::vector<EventPrefixRecord> build_prefixes(const EventLog& log) {
    std::vector<EventPrefixRecord> records;
    for (std::size_t ti = 0; ti < log.traces.size(); ++ti) {
        const Trace& trace = log.traces[ti];
        const std::size_t n = trace.events.size();
        if (n < 3)
            throw Error(ErrorKind::TraceTooShort,
                        "trace " + trace.case_id + " has " + std::to_string(n) +
                            " events; filter short traces first");
        const TimestampMs t_last = trace.events[n - 1].timestamp;
        for (std::size_t k = 2; k <= n - 1; ++k) {
            EventPrefixRecord rec;
            rec.case_id = trace.case_id;
            rec.trace_index = ti;
            rec.k = k;
            rec.remaining_seconds =
                static_cast<double>(t_last - trace.events[k - 1].timestamp) / kMsPerSecond;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

SplitPlan make_split(const EventLog& log, SplitMode mode, double folds, std::uint64_t seed,
                     double validation_fraction) {
    if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
        throw Error(ErrorKind::Usage, "validation fraction must be in (0, 1)");
    SplitPlan plan;
    plan.mode = mode;
    plan.folds = folds;
    plan.seed = seed;
    plan.validation_fraction = validation_fraction;

    if (mode == SplitMode::CrossValidation) {
        int n_folds = static_cast<int>(folds);
        if (n_folds < 2) throw Error(ErrorKind::Usage, "cv needs at least 2 folds");
        if (log.traces.size() < static_cast<std::size_t>(n_folds))
            throw Error(ErrorKind::TooFewCases, "fewer cases than folds");
        std::vector<std::string> ids;
        ids.reserve(log.traces.size());
        for (const auto& t : log.traces) ids.push_back(t.case_id);
        std::sort(ids.begin(), ids.end());
        Rng rng(derive_seed(seed, "split/cv"));
        rng.shuffle(ids);
        for (std::size_t i = 0; i < ids.size(); ++i)
            plan.assignment[ids[i]] = static_cast<int>(i % n_folds);
    } else {
        if (folds <= 0.0 || folds >= 1.0)
            throw Error(ErrorKind::Usage, "holdout ratio must be in (0, 1)");
        struct CaseStart {
            std::string id;
            TimestampMs start;
        };
        std::vector<CaseStart> cases;
        cases.reserve(log.traces.size());
        for (const auto& t : log.traces) cases.push_back({t.case_id, t.start()});
        std::sort(cases.begin(), cases.end(), [](const CaseStart& a, const CaseStart& b) {
            return a.start != b.start ? a.start < b.start : a.id < b.id;
        });
        auto n_train = static_cast<std::size_t>(
            std::llround(folds * static_cast<double>(cases.size())));
        if (n_train == 0 || n_train == cases.size())
            throw Error(ErrorKind::TooFewCases, "holdout split leaves an empty side");
        for (std::size_t i = 0; i < cases.size(); ++i)
            plan.assignment[cases[i].id] = i < n_train ? 0 : 1;
    }
    return plan;
}

FoldSets materialize_fold(const std::vector<EventPrefixRecord>& records, const SplitPlan& plan,
                          int fold) {
    if (fold < 0 || fold >= plan.fold_count())
        throw Error(ErrorKind::Usage, "fold index out of range");
    const int test_label = plan.mode == SplitMode::CrossValidation ? fold : 1;

    for (const auto& rec : records)
        if (!plan.assignment.count(rec.case_id))
            throw Error(ErrorKind::TooFewCases, "case " + rec.case_id + " missing from split plan");

    // Validation cases come out of the non-test cases, seeded per fold.
    std::vector<std::string> pool;
    for (const auto& [cid, label] : plan.assignment)
        if (label != test_label) pool.push_back(cid); // map iteration: already sorted
    if (pool.size() < 2) throw Error(ErrorKind::TooFewCases, "not enough non-test cases");
    Rng rng(derive_seed(plan.seed, "split/validation", static_cast<std::uint64_t>(fold)));
    rng.shuffle(pool);
    auto n_val = static_cast<std::size_t>(
        std::llround(plan.validation_fraction * static_cast<double>(pool.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, pool.size() - 1);
    std::set<std::string> val_cases(pool.begin(), pool.begin() + n_val);

    FoldSets sets;
    for (const auto& rec : records) {
        int label = plan.assignment.at(rec.case_id);
        if (label == test_label)
            sets.test.push_back(rec);
        else if (val_cases.count(rec.case_id))
            sets.validation.push_back(rec);
        else
            sets.train.push_back(rec);
    }
    if (sets.train.empty() || sets.validation.empty() || sets.test.empty())
        throw Error(ErrorKind::TooFewCases, "a split side carries no prefixes");
    return sets;
}

std::string split_plan_to_json(const SplitPlan& plan) {
    nlohmann::json j;
    j["mode"] = plan.mode == SplitMode::CrossValidation ? "cv" : "holdout";
    j["folds"] = plan.folds;
    j["seed"] = plan.seed;
    j["validation_fraction"] = plan.validation_fraction;
    j["assignment"] = plan.assignment;
    return j.dump(2);
}

SplitPlan split_plan_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, std::string("bad split plan: ") + e.what());
    }
    SplitPlan plan;
    std::string mode = j.at("mode").get<std::string>();
    plan.mode = mode == "cv" ? SplitMode::CrossValidation : SplitMode::Holdout;
    plan.folds = j.at("folds").get<double>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.validation_fraction = j.at("validation_fraction").get<double>();
    plan.assignment = j.at("assignment").get<std::map<std::string, int>>();
    return plan;
}

void save_split_plan(const SplitPlan& plan, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << split_plan_to_json(plan) << '\n';
}

SplitPlan load_split_plan(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return split_plan_from_json(text);
}

} // namespace procgt
