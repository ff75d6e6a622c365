#include "procgt/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "procgt/errors.hpp"
#include "procgt/graphbuild.hpp"

namespace procgt {

namespace {

using Json = nlohmann::json;

constexpr double kSecondsPerDay = 86400.0;

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double average_case_duration_days(const EventLog& log) {
    double sum = 0.0;
    for (const auto& t : log.traces) sum += t.duration_seconds();
    return sum / static_cast<double>(log.traces.size()) / kSecondsPerDay;
}

} // namespace

double DummyBaseline::predict(std::size_t k) const {
    auto it = mean_by_k.find(k);
    if (it != mean_by_k.end()) return it->second;
    // nearest seen length, ties to the smaller
    auto ge = mean_by_k.lower_bound(k);
    if (ge == mean_by_k.begin()) return ge->second;
    if (ge == mean_by_k.end()) return std::prev(ge)->second;
    auto lt = std::prev(ge);
    const std::size_t below = k - lt->first;
    const std::size_t above = ge->first - k;
    return below <= above ? lt->second : ge->second;
}

DummyBaseline fit_dummy(const std::vector<EventPrefixRecord>& train_records) {
    if (train_records.empty())
        throw Error(ErrorKind::TooFewCases, "no training records for the baseline");
    std::map<std::size_t, std::pair<std::size_t, double>> acc; // k -> (count, sum)
    for (const auto& r : train_records) {
        auto& [count, sum] = acc[r.k];
        count += 1;
        sum += r.remaining_seconds;
    }
    DummyBaseline d;
    for (const auto& [k, cs] : acc) d.mean_by_k[k] = cs.second / static_cast<double>(cs.first);
    return d;
}

EvaluationReport evaluate(const std::vector<double>& predictions_seconds,
                          const std::vector<EventPrefixRecord>& records,
                          double avg_case_duration_days) {
    if (predictions_seconds.size() != records.size())
        throw Error(ErrorKind::LengthMismatch, "predictions do not align with records");
    EvaluationReport rep;
    if (records.empty()) return rep;
    std::map<std::size_t, std::pair<std::size_t, double>> buckets; // k -> (count, abs sum days)
    double total = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const double err_days =
            std::abs(predictions_seconds[i] - records[i].remaining_seconds) / kSecondsPerDay;
        total += err_days;
        auto& [count, sum] = buckets[records[i].k];
        count += 1;
        sum += err_days;
    }
    rep.mae_days = total / static_cast<double>(records.size());
    rep.relative_mae = avg_case_duration_days > 0.0 ? rep.mae_days / avg_case_duration_days : 0.0;
    for (const auto& [k, cs] : buckets)
        rep.per_prefix_length[k] = {cs.first, cs.second / static_cast<double>(cs.first)};
    return rep;
}

EvaluationReport pool_reports(const std::vector<EvaluationReport>& reports) {
    EvaluationReport out;
    std::map<std::size_t, std::pair<std::size_t, double>> buckets;
    double total = 0.0;
    std::size_t n = 0;
    double rel_weighted = 0.0;
    for (const auto& r : reports) {
        std::size_t rn = 0;
        for (const auto& [k, b] : r.per_prefix_length) {
            auto& [count, sum] = buckets[k];
            count += b.count;
            sum += b.mae_days * static_cast<double>(b.count);
            rn += b.count;
        }
        total += r.mae_days * static_cast<double>(rn);
        rel_weighted += r.relative_mae * static_cast<double>(rn);
        n += rn;
    }
    if (n == 0) return out;
    out.mae_days = total / static_cast<double>(n);
    out.relative_mae = rel_weighted / static_cast<double>(n);
    for (const auto& [k, cs] : buckets)
        out.per_prefix_length[k] = {cs.first, cs.second / static_cast<double>(cs.first)};
    return out;
}

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

Aggregate aggregate_values(const std::vector<double>& xs) {
    Aggregate a;
    if (xs.empty()) return a;
    for (double x : xs) a.mean += x;
    a.mean /= static_cast<double>(xs.size());
    a.std = sample_std(xs);
    return a;
}

CrossValReport cross_validate(const EventLog& log, const SplitPlan& plan,
                              const ModelConfig& model_config, const TrainConfig& train_config,
                              const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw Error(ErrorKind::Usage, "at least one seed is required");
    CrossValReport out;
    out.avg_case_duration_days = average_case_duration_days(log);
    const auto records = build_prefixes(log);
    std::vector<double> model_maes, dummy_maes, model_rels, dummy_rels;
    std::vector<EvaluationReport> model_reports, dummy_reports;

    for (int fold = 0; fold < plan.fold_count(); ++fold) {
        FoldSets sets = materialize_fold(records, plan, fold);
        NormalizationStats stats = fit_stats(sets.train, log);
        const auto train_graphs = build_dataset(sets.train, log, stats);
        const auto val_graphs = build_dataset(sets.validation, log, stats);
        const auto test_graphs = build_dataset(sets.test, log, stats);

        // The baseline sees the whole non-test side, like the model does.
        std::vector<EventPrefixRecord> baseline_records = sets.train;
        baseline_records.insert(baseline_records.end(), sets.validation.begin(),
                                sets.validation.end());
        DummyBaseline dummy = fit_dummy(baseline_records);
        std::vector<double> dummy_preds;
        dummy_preds.reserve(sets.test.size());
        for (const auto& r : sets.test) dummy_preds.push_back(dummy.predict(r.k));
        EvaluationReport dummy_rep =
            evaluate(dummy_preds, sets.test, out.avg_case_duration_days);

        for (std::uint64_t seed : seeds) {
            TrainConfig tc = train_config;
            tc.seed = seed;
            TrainedModel model =
                train_model(train_graphs, val_graphs, stats, model_config, tc);
            std::vector<double> preds = predict_seconds(model, test_graphs);
            RunReport run;
            run.fold = fold;
            run.seed = seed;
            run.model = evaluate(preds, sets.test, out.avg_case_duration_days);
            run.dummy = dummy_rep;
            run.diverged = model.diverged;
            run.epochs_completed = model.curve.size();
            run.best_val_loss = model.best_val_loss;
            model_maes.push_back(run.model.mae_days);
            dummy_maes.push_back(run.dummy.mae_days);
            model_rels.push_back(run.model.relative_mae);
            dummy_rels.push_back(run.dummy.relative_mae);
            model_reports.push_back(run.model);
            dummy_reports.push_back(run.dummy);
            out.runs.push_back(std::move(run));
        }
    }
    out.model_mae_days = aggregate_values(model_maes);
    out.dummy_mae_days = aggregate_values(dummy_maes);
    out.model_relative_mae = aggregate_values(model_rels);
    out.dummy_relative_mae = aggregate_values(dummy_rels);
    out.pooled_model = pool_reports(model_reports);
    out.pooled_dummy = pool_reports(dummy_reports);
    return out;
}

namespace {

Json report_json(const EvaluationReport& r) {
    Json j;
    j["mae_days"] = r.mae_days;
    j["relative_mae"] = r.relative_mae;
    Json per = Json::array();
    for (const auto& [k, b] : r.per_prefix_length)
        per.push_back({{"k", k}, {"count", b.count}, {"mae_days", b.mae_days}});
    j["per_prefix_length"] = std::move(per);
    return j;
}

Json aggregate_json(const Aggregate& a) { return {{"mean", a.mean}, {"std", a.std}}; }

} // namespace

std::string report_to_json(const CrossValReport& report) {
    Json j;
    j["avg_case_duration_days"] = report.avg_case_duration_days;
    Json runs = Json::array();
    for (const auto& r : report.runs) {
        Json rj;
        rj["fold"] = r.fold;
        rj["seed"] = r.seed;
        rj["model"] = report_json(r.model);
        rj["dummy"] = report_json(r.dummy);
        rj["diverged"] = r.diverged;
        rj["epochs_completed"] = r.epochs_completed;
        rj["best_val_loss"] = r.best_val_loss;
        runs.push_back(std::move(rj));
    }
    j["runs"] = std::move(runs);
    j["aggregate"] = {{"model_mae_days", aggregate_json(report.model_mae_days)},
                      {"dummy_mae_days", aggregate_json(report.dummy_mae_days)},
                      {"model_relative_mae", aggregate_json(report.model_relative_mae)},
                      {"dummy_relative_mae", aggregate_json(report.dummy_relative_mae)}};
    j["pooled_model"] = report_json(report.pooled_model);
    j["pooled_dummy"] = report_json(report.pooled_dummy);
    return j.dump(2);
}

void save_report(const CrossValReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << report_to_json(report) << '\n';
}

void emit_earliness_table(const EvaluationReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    std::size_t total = 0;
    for (const auto& [k, b] : report.per_prefix_length) total += b.count;
    // smallest length whose cumulative share reaches 90% of all prefixes
    std::size_t cutoff = 0;
    std::size_t cum = 0;
    for (const auto& [k, b] : report.per_prefix_length) {
        cum += b.count;
        cutoff = k;
        if (static_cast<double>(cum) >= 0.9 * static_cast<double>(total)) break;
    }
    out << "k,count,mae_days,within_p90\n";
    for (const auto& [k, b] : report.per_prefix_length)
        out << k << ',' << b.count << ',' << format_double(b.mae_days) << ','
            << (k <= cutoff ? 1 : 0) << '\n';
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

} // namespace procgt
