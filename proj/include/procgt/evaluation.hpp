#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "procgt/prefixing.hpp"
#include "procgt/training.hpp"

namespace procgt {

// Baseline predicting the mean training remaining time for a prefix length;
// unseen lengths fall back to the nearest seen length (ties to the smaller).
struct DummyBaseline {
    std::map<std::size_t, double> mean_by_k; // k -> mean remaining seconds

    double predict(std::size_t k) const;
};

DummyBaseline fit_dummy(const std::vector<EventPrefixRecord>& train_records);

struct PrefixLengthBucket {
    std::size_t count = 0;
    double mae_days = 0.0;
};

struct EvaluationReport {
    double mae_days = 0.0;
    double relative_mae = 0.0; // mae_days / average case duration in days
    std::map<std::size_t, PrefixLengthBucket> per_prefix_length;
};

// predictions in seconds, aligned with records; the denominator of the
// relative MAE is the full log's average case duration.
EvaluationReport evaluate(const std::vector<double>& predictions_seconds,
                          const std::vector<EventPrefixRecord>& records,
                          double avg_case_duration_days);

// Count-weighted merge of per-length buckets and overall MAE.
EvaluationReport pool_reports(const std::vector<EvaluationReport>& reports);

double sample_std(const std::vector<double>& xs); // n-1 denominator; n < 2 -> 0

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;
};
Aggregate aggregate_values(const std::vector<double>& xs);

struct RunReport {
    int fold = 0;
    std::uint64_t seed = 0;
    EvaluationReport model;
    EvaluationReport dummy;
    bool diverged = false;
    std::size_t epochs_completed = 0;
    double best_val_loss = 0.0;
};

struct CrossValReport {
    std::vector<RunReport> runs;
    Aggregate model_mae_days, dummy_mae_days;
    Aggregate model_relative_mae, dummy_relative_mae;
    EvaluationReport pooled_model; // all runs' test predictions, merged
    EvaluationReport pooled_dummy;
    double avg_case_duration_days = 0.0;
};

// Trains and evaluates every (fold, seed) combination of the split plan.
CrossValReport cross_validate(const EventLog& log, const SplitPlan& plan,
                              const ModelConfig& model_config, const TrainConfig& train_config,
                              const std::vector<std::uint64_t>& seeds);

std::string report_to_json(const CrossValReport& report);
void save_report(const CrossValReport& report, const std::string& path);

// CSV rows k,count,mae_days,within_p90 where within_p90 marks lengths up to
// the 90th percentile of the prefix-length distribution.
void emit_earliness_table(const EvaluationReport& report, const std::string& path);

} // namespace procgt
