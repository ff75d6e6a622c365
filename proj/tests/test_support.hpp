#pragma once

// Shared oracles and fixtures. Everything here recomputes results with naive
// loops independent of the library's linear algebra, so tests compare two
// genuinely different implementations.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "procgt/eventlog.hpp"
#include "procgt/graphbuild.hpp"
#include "procgt/model.hpp"
#include "procgt/prefixing.hpp"
#include "procgt/rng.hpp"
#include "procgt/timeutil.hpp"

namespace procgt::testing {

// Fresh per-test scratch directory under the system temp root.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("procgt_tests_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Random multi-trace log over a small alphabet; small alphabets force
// repeated classes, self-loops, and parallel directly-follows pairs.
inline EventLog random_log(std::uint64_t seed, std::size_t traces, std::size_t min_len = 3,
                           std::size_t max_len = 12, std::size_t alphabet = 4,
                           bool lifecycles = false) {
    Rng rng(derive_seed(seed, "test/random_log"));
    EventLog log;
    log.schema["cost"] = {AttrKind::Numeric, AttrScope::EventLevel};
    log.schema["group"] = {AttrKind::Categorical, AttrScope::EventLevel};
    log.schema["budget"] = {AttrKind::Numeric, AttrScope::CaseLevel};
    const TimestampMs origin = parse_iso8601("2023-03-01T08:00:00Z").value();
    for (std::size_t t = 0; t < traces; ++t) {
        Trace trace;
        trace.case_id = "case-" + std::to_string(t);
        const std::size_t len = min_len + rng.index(max_len - min_len + 1);
        TimestampMs ts = origin + static_cast<TimestampMs>(rng.index(1000)) * 60000;
        const double budget = std::floor(rng.uniform(0.0, 500.0));
        for (std::size_t i = 0; i < len; ++i) {
            Event e;
            e.case_id = trace.case_id;
            e.activity = std::string(1, static_cast<char>('A' + rng.index(alphabet)));
            if (lifecycles && rng.next_double() < 0.5)
                e.lifecycle = rng.next_double() < 0.5 ? "start" : "complete";
            ts += static_cast<TimestampMs>(1 + rng.index(7200)) * 1000;
            e.timestamp = ts;
            e.attrs["cost"] = std::floor(rng.uniform(0.0, 100.0));
            e.attrs["group"] = std::string(1, static_cast<char>('x' + rng.index(3)));
            e.attrs["budget"] = budget;
            trace.events.push_back(std::move(e));
        }
        log.traces.push_back(std::move(trace));
    }
    return log;
}

// Naive consecutive-pair scan: the directly-follows truth a graph builder
// must reproduce.
struct DfOracleEdge {
    EventClass src, tgt;
    long long count = 0;
    double total_duration_s = 0.0;
    double last_duration_s = 0.0;
    TimestampMs last_target_ts = 0;
    std::size_t last_target_index = 0; // index into the prefix
};

inline std::vector<DfOracleEdge> df_scan(std::span<const Event> events) {
    std::vector<DfOracleEdge> out;
    std::map<std::pair<EventClass, EventClass>, std::size_t> where;
    for (std::size_t i = 0; i + 1 < events.size(); ++i) {
        const auto key = std::make_pair(event_class_of(events[i]), event_class_of(events[i + 1]));
        auto it = where.find(key);
        if (it == where.end()) {
            it = where.emplace(key, out.size()).first;
            out.push_back({key.first, key.second, 0, 0.0, 0.0, 0, 0});
        }
        DfOracleEdge& e = out[it->second];
        const double dur =
            static_cast<double>(events[i + 1].timestamp - events[i].timestamp) / 1000.0;
        e.count += 1;
        e.total_duration_s += dur;
        e.last_duration_s = dur;
        e.last_target_ts = events[i + 1].timestamp;
        e.last_target_index = i + 1;
    }
    return out;
}

// Distinct classes in first-occurrence order, the builder's node order.
inline std::vector<EventClass> first_occurrence_classes(std::span<const Event> events) {
    std::vector<EventClass> out;
    std::set<EventClass> seen;
    for (const auto& e : events) {
        auto c = event_class_of(e);
        if (seen.insert(c).second) out.push_back(std::move(c));
    }
    return out;
}

// Sweep-line concurrency oracle: cases active (closed interval) at t.
inline long long active_at_oracle(const std::vector<std::pair<TimestampMs, TimestampMs>>& spans,
                                  TimestampMs t) {
    long long n = 0;
    for (const auto& [s, e] : spans)
        if (s <= t && t <= e) ++n;
    return n;
}

// Node relabeling: pi[old] = new. Edge order and features are untouched;
// encodings rows travel with their nodes.
inline PrefixGraph permute_graph(const PrefixGraph& g, const std::vector<std::size_t>& pi) {
    PrefixGraph h;
    h.case_id = g.case_id;
    h.k = g.k;
    h.target_normalized = g.target_normalized;
    h.node_class_ids.resize(g.node_count());
    for (std::size_t i = 0; i < g.node_count(); ++i)
        h.node_class_ids[pi[i]] = g.node_class_ids[i];
    for (const auto& [s, t] : g.edges)
        h.edges.emplace_back(static_cast<int>(pi[static_cast<std::size_t>(s)]),
                             static_cast<int>(pi[static_cast<std::size_t>(t)]));
    h.edge_features = g.edge_features;
    return h;
}

inline GraphEncodings permute_encodings(const GraphEncodings& e,
                                        const std::vector<std::size_t>& pi) {
    GraphEncodings out;
    out.lap_eigenvalues = e.lap_eigenvalues;
    out.lap_pe.resize(e.lap_pe.size());
    out.rwse.resize(e.rwse.size());
    for (std::size_t i = 0; i < e.lap_pe.size(); ++i) {
        out.lap_pe[pi[i]] = e.lap_pe[i];
        out.rwse[pi[i]] = e.rwse[i];
    }
    return out;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> pi(n);
    for (std::size_t i = 0; i < n; ++i) pi[i] = i;
    rng.shuffle(pi);
    return pi;
}

// Moves every parameter off zero so no relu pre-activation sits exactly on a
// kink at the finite-difference evaluation point (zero RWSE rows hit b == 0).
inline void jitter_parameters(ModelParams& params, std::uint64_t seed) {
    Rng rng(seed);
    params.visit([&](const std::string&, Eigen::MatrixXd& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += rng.uniform(-0.05, 0.05);
    });
}

// Central finite differences against analytic gradients for every parameter
// array. Passes iff |analytic - fd| <= tol * max(|analytic|, |fd|) + atol.
struct GradCheck {
    bool ok = true;
    double worst_rel = 0.0;
    std::string worst_array;
};

inline GradCheck finite_difference_check(const BatchedGraphs& batch, ModelParams& params,
                                         const ModelConfig& config, std::uint64_t dropout_seed,
                                         double h = 1e-5, double tol = 1e-4,
                                         double atol = 1e-7) {
    ModelParams grads = make_params(config);
    backward(batch, params, config, dropout_seed, grads);

    std::vector<std::pair<std::string, Eigen::MatrixXd*>> arrays;
    params.visit([&](const std::string& n, Eigen::MatrixXd& m) { arrays.emplace_back(n, &m); });
    std::vector<const Eigen::MatrixXd*> grad_arrays;
    grads.visit(
        [&](const std::string&, const Eigen::MatrixXd& m) { grad_arrays.push_back(&m); });

    auto loss_now = [&]() {
        ForwardResult r = forward(batch, params, config, true, dropout_seed);
        return l1_loss(r.predictions, batch.targets);
    };

    GradCheck res;
    for (std::size_t a = 0; a < arrays.size(); ++a) {
        Eigen::MatrixXd& m = *arrays[a].second;
        const Eigen::MatrixXd& g = *grad_arrays[a];
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const double saved = m(r, c);
                const double an = g(r, c);
                // a relu kink within h of the point contaminates the quotient;
                // shrinking h clears a straddled kink but not a wrong gradient
                double err = 0.0, rel = 0.0;
                bool pass = false;
                for (const double step : {h, h / 10.0}) {
                    m(r, c) = saved + step;
                    const double lp = loss_now();
                    m(r, c) = saved - step;
                    const double lm = loss_now();
                    m(r, c) = saved;
                    const double fd = (lp - lm) / (2.0 * step);
                    err = std::abs(an - fd);
                    const double scale = std::max(std::abs(an), std::abs(fd));
                    rel = err / std::max(scale, 1e-12);
                    if (err <= tol * scale + atol) {
                        pass = true;
                        break;
                    }
                }
                if (!pass) {
                    res.ok = false;
                    if (rel > res.worst_rel) {
                        res.worst_rel = rel;
                        res.worst_array = arrays[a].first;
                    }
                }
            }
    }
    return res;
}

// Random small graphs paired with valid stats, for model-level tests that
// need plausible inputs rather than a full log pipeline.
struct GraphFixture {
    EventLog log;
    std::vector<EventPrefixRecord> records;
    NormalizationStats stats;
    std::vector<PrefixGraph> graphs;
};

inline GraphFixture make_graph_fixture(std::uint64_t seed, std::size_t traces = 20) {
    GraphFixture f;
    f.log = random_log(seed, traces);
    f.records = build_prefixes(f.log);
    f.stats = fit_stats(f.records, f.log);
    f.graphs = build_dataset(f.records, f.log, f.stats);
    return f;
}

} // namespace procgt::testing
