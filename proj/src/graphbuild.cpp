#include "procgt/graphbuild.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "procgt/errors.hpp"

namespace procgt {

namespace {

using Json = nlohmann::json;

double encode_numeric(const AttrRange& range, const double* value) {
    if (!value) return 0.0;
    const double span = range.max - range.min;
    if (span <= 0.0) return 0.0;
    return (*value - range.min) / span; // deliberately unclamped
}

const AttrValue* find_attr(std::span<const Event> events, const std::string& name,
                           bool case_level) {
    if (case_level) {
        for (const auto& e : events) {
            auto it = e.attrs.find(name);
            if (it != e.attrs.end()) return &it->second;
        }
        return nullptr;
    }
    auto it = events.back().attrs.find(name);
    return it == events.back().attrs.end() ? nullptr : &it->second;
}

std::string attr_as_text(const AttrValue& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    return std::to_string(std::get<double>(v));
}

} // namespace

int NormalizationStats::class_id(const EventClass& c) const {
    auto it = std::lower_bound(event_classes.begin(), event_classes.end(), c);
    if (it == event_classes.end() || !(*it == c)) return 0;
    return static_cast<int>(it - event_classes.begin()) + 1;
}

long long NormalizationStats::active_cases_at(TimestampMs t) const {
    auto started = std::upper_bound(active_starts.begin(), active_starts.end(), t) -
                   active_starts.begin();
    auto finished = std::lower_bound(active_ends.begin(), active_ends.end(), t) -
                    active_ends.begin();
    return static_cast<long long>(started - finished);
}

std::vector<FeatureBlock> NormalizationStats::feature_layout() const {
    std::vector<FeatureBlock> layout;
    std::size_t col = 0;
    auto push = [&](const std::string& name, std::size_t width) {
        layout.push_back({name, col, col + width});
        col += width;
    };
    push("weight", 1);
    push("t1", 1);
    push("t2", 1);
    push("t3", 1);
    push("t4", 1);
    push("t5", 1);
    for (const auto& [name, range] : case_numeric) push("case_num:" + name, 1);
    for (const auto& [name, vocab] : case_categorical) push("case_cat:" + name, vocab.size());
    for (const auto& [name, range] : event_numeric) push("event_num:" + name, 1);
    for (const auto& [name, vocab] : event_categorical) push("event_cat:" + name, vocab.size());
    push("workload", 1);
    return layout;
}

std::size_t NormalizationStats::feature_length() const {
    const auto layout = feature_layout();
    return layout.back().end;
}

NormalizationStats fit_stats(const std::vector<EventPrefixRecord>& train_records,
                             const EventLog& log) {
    if (train_records.empty())
        throw Error(ErrorKind::DegenerateStat, "no training records to fit statistics on");

    NormalizationStats stats;

    // Per-prefix maximum of within-prefix DF counts, then the maximum of
    // those maxima across all training prefixes.
    std::set<EventClass> classes;
    for (const auto& rec : train_records) {
        auto events = rec.events(log);
        std::map<std::pair<EventClass, EventClass>, long long> counts;
        long long prefix_max = 0;
        classes.insert(event_class_of(events[0]));
        for (std::size_t i = 0; i + 1 < events.size(); ++i) {
            classes.insert(event_class_of(events[i + 1]));
            auto key = std::make_pair(event_class_of(events[i]), event_class_of(events[i + 1]));
            prefix_max = std::max(prefix_max, ++counts[key]);
        }
        stats.max_df_count = std::max(stats.max_df_count, prefix_max);
    }
    stats.event_classes.assign(classes.begin(), classes.end());

    std::set<std::size_t> train_trace_idx;
    for (const auto& rec : train_records) train_trace_idx.insert(rec.trace_index);

    std::map<std::string, AttrRange> num_ranges[2];               // [case, event]
    std::map<std::string, std::set<std::string>> cat_values[2];   // [case, event]
    std::vector<TimestampMs> sweep_points;

    for (std::size_t ti : train_trace_idx) {
        const Trace& trace = log.traces[ti];
        stats.max_case_duration_seconds =
            std::max(stats.max_case_duration_seconds, trace.duration_seconds());
        stats.active_starts.push_back(trace.start());
        stats.active_ends.push_back(trace.end());
        for (const auto& e : trace.events) {
            sweep_points.push_back(e.timestamp);
            for (const auto& [name, value] : e.attrs) {
                auto sit = log.schema.find(name);
                const AttrSpec spec = sit == log.schema.end() ? AttrSpec{} : sit->second;
                const int side = spec.scope == AttrScope::CaseLevel ? 0 : 1;
                if (spec.kind == AttrKind::Numeric) {
                    if (const auto* num = std::get_if<double>(&value)) {
                        auto [it, fresh] = num_ranges[side].try_emplace(name, AttrRange{*num, *num});
                        if (!fresh) {
                            it->second.min = std::min(it->second.min, *num);
                            it->second.max = std::max(it->second.max, *num);
                        }
                    }
                } else {
                    cat_values[side][name].insert(attr_as_text(value));
                }
            }
        }
    }
    std::sort(stats.active_starts.begin(), stats.active_starts.end());
    std::sort(stats.active_ends.begin(), stats.active_ends.end());

    for (TimestampMs t : sweep_points)
        stats.max_concurrent_cases = std::max(stats.max_concurrent_cases, stats.active_cases_at(t));

    for (const auto& [name, range] : num_ranges[0]) stats.case_numeric.emplace_back(name, range);
    for (const auto& [name, range] : num_ranges[1]) stats.event_numeric.emplace_back(name, range);
    for (const auto& [name, values] : cat_values[0])
        stats.case_categorical.emplace_back(name,
                                            std::vector<std::string>(values.begin(), values.end()));
    for (const auto& [name, values] : cat_values[1])
        stats.event_categorical.emplace_back(
            name, std::vector<std::string>(values.begin(), values.end()));

    if (stats.max_df_count <= 0)
        throw Error(ErrorKind::DegenerateStat, "maximum directly-follows count is zero");
    if (stats.max_case_duration_seconds <= 0.0)
        throw Error(ErrorKind::DegenerateStat, "all training case durations are zero");
    if (stats.max_concurrent_cases <= 0)
        throw Error(ErrorKind::DegenerateStat, "no active training case observed");
    return stats;
}

PrefixGraph build_graph(const EventPrefixRecord& record, const EventLog& log,
                        const NormalizationStats& stats) {
    auto events = record.events(log);
    PrefixGraph g;
    g.case_id = record.case_id;
    g.k = record.k;
    g.target_normalized = record.remaining_seconds / stats.max_case_duration_seconds;

    std::map<EventClass, int> node_of;
    auto node_index = [&](const Event& e) {
        auto cls = event_class_of(e);
        auto it = node_of.find(cls);
        if (it != node_of.end()) return it->second;
        int idx = static_cast<int>(g.node_class_ids.size());
        node_of.emplace(cls, idx);
        g.node_class_ids.push_back(stats.class_id(cls));
        return idx;
    };

    struct EdgeAccum {
        long long count = 0;
        double total_duration = 0.0;
        double last_duration = 0.0;
        TimestampMs last_target_ts = 0;
        const Event* last_target = nullptr;
    };
    std::map<std::pair<int, int>, std::size_t> edge_of;
    std::vector<EdgeAccum> accum;

    node_index(events[0]);
    for (std::size_t i = 0; i + 1 < events.size(); ++i) {
        const Event& src = events[i];
        const Event& tgt = events[i + 1];
        auto key = std::make_pair(node_index(src), node_index(tgt));
        auto it = edge_of.find(key);
        if (it == edge_of.end()) {
            it = edge_of.emplace(key, g.edges.size()).first;
            g.edges.push_back(key);
            accum.emplace_back();
        }
        EdgeAccum& a = accum[it->second];
        const double dur = static_cast<double>(tgt.timestamp - src.timestamp) / kMsPerSecond;
        a.count += 1;
        a.total_duration += dur;
        a.last_duration = dur;
        a.last_target_ts = tgt.timestamp;
        a.last_target = &tgt;
    }

    const double max_dur = stats.max_case_duration_seconds;
    const TimestampMs case_start = events[0].timestamp;
    g.edge_features.reserve(g.edges.size());
    for (const EdgeAccum& a : accum) {
        std::vector<double> f;
        f.reserve(stats.feature_length());
        f.push_back(static_cast<double>(a.count) / static_cast<double>(stats.max_df_count));
        f.push_back(a.total_duration / max_dur);
        f.push_back(a.last_duration / max_dur);
        f.push_back(static_cast<double>(a.last_target_ts - case_start) / kMsPerSecond / max_dur);
        f.push_back(seconds_since_midnight(a.last_target_ts) / 86400.0);
        f.push_back(seconds_since_monday(a.last_target_ts) / 604800.0);

        for (const auto& [name, range] : stats.case_numeric) {
            const AttrValue* v = find_attr(events, name, true);
            const double* num = v ? std::get_if<double>(v) : nullptr;
            f.push_back(encode_numeric(range, num));
        }
        for (const auto& [name, vocab] : stats.case_categorical) {
            const AttrValue* v = find_attr(events, name, true);
            std::size_t base = f.size();
            f.resize(base + vocab.size(), 0.0);
            if (v) {
                auto text = attr_as_text(*v);
                auto it = std::lower_bound(vocab.begin(), vocab.end(), text);
                if (it != vocab.end() && *it == text) f[base + (it - vocab.begin())] = 1.0;
            }
        }
        std::span<const Event> tgt_span(a.last_target, 1);
        for (const auto& [name, range] : stats.event_numeric) {
            const AttrValue* v = find_attr(tgt_span, name, false);
            const double* num = v ? std::get_if<double>(v) : nullptr;
            f.push_back(encode_numeric(range, num));
        }
        for (const auto& [name, vocab] : stats.event_categorical) {
            const AttrValue* v = find_attr(tgt_span, name, false);
            std::size_t base = f.size();
            f.resize(base + vocab.size(), 0.0);
            if (v) {
                auto text = attr_as_text(*v);
                auto it = std::lower_bound(vocab.begin(), vocab.end(), text);
                if (it != vocab.end() && *it == text) f[base + (it - vocab.begin())] = 1.0;
            }
        }
        f.push_back(static_cast<double>(stats.active_cases_at(a.last_target_ts)) /
                    static_cast<double>(stats.max_concurrent_cases));
        g.edge_features.push_back(std::move(f));
    }
    return g;
}

std::vector<PrefixGraph> build_dataset(const std::vector<EventPrefixRecord>& records,
                                       const EventLog& log, const NormalizationStats& stats) {
    std::vector<PrefixGraph> graphs;
    graphs.reserve(records.size());
    for (const auto& rec : records) graphs.push_back(build_graph(rec, log, stats));
    return graphs;
}

namespace {

Json graph_to_json(const PrefixGraph& g) {
    Json j;
    j["case_id"] = g.case_id;
    j["k"] = g.k;
    j["node_class_ids"] = g.node_class_ids;
    Json edges = Json::array();
    for (const auto& [s, t] : g.edges) edges.push_back(Json::array({s, t}));
    j["edges"] = std::move(edges);
    j["edge_features"] = g.edge_features;
    j["target"] = g.target_normalized;
    return j;
}

PrefixGraph graph_from_json(const Json& j) {
    PrefixGraph g;
    g.case_id = j.at("case_id").get<std::string>();
    g.k = j.at("k").get<std::size_t>();
    g.node_class_ids = j.at("node_class_ids").get<std::vector<int>>();
    for (const auto& e : j.at("edges"))
        g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    g.edge_features = j.at("edge_features").get<std::vector<std::vector<double>>>();
    g.target_normalized = j.at("target").get<double>();
    return g;
}

} // namespace

void write_dataset(const std::vector<PrefixGraph>& graphs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    Json header;
    header["schema_version"] = kDatasetSchemaVersion;
    out << header.dump() << '\n';
    for (const auto& g : graphs) out << graph_to_json(g).dump() << '\n';
}

std::vector<PrefixGraph> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorKind::SchemaVersionMismatch, "dataset has no header line: " + path);
    Json header;
    try {
        header = Json::parse(line);
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::SchemaVersionMismatch, std::string("bad dataset header: ") + e.what());
    }
    if (header.value("schema_version", "") != kDatasetSchemaVersion)
        throw Error(ErrorKind::SchemaVersionMismatch,
                    "dataset schema version '" + header.value("schema_version", "") +
                        "' != '" + kDatasetSchemaVersion + "'");
    std::vector<PrefixGraph> graphs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            graphs.push_back(graph_from_json(Json::parse(line)));
        } catch (const Json::exception& e) {
            throw Error(ErrorKind::Io, std::string("bad graph line: ") + e.what());
        }
    }
    return graphs;
}

std::string stats_to_json(const NormalizationStats& stats) {
    Json j;
    j["schema_version"] = kDatasetSchemaVersion;
    j["max_df_count"] = stats.max_df_count;
    j["max_case_duration_seconds"] = stats.max_case_duration_seconds;
    j["max_concurrent_cases"] = stats.max_concurrent_cases;
    Json classes = Json::array();
    for (const auto& c : stats.event_classes) {
        Json e;
        e["activity"] = c.activity;
        if (c.lifecycle) e["lifecycle"] = *c.lifecycle;
        else e["lifecycle"] = nullptr;
        classes.push_back(std::move(e));
    }
    j["event_classes"] = std::move(classes);
    auto ranges = [](const std::vector<std::pair<std::string, AttrRange>>& v) {
        Json out = Json::array();
        for (const auto& [name, r] : v)
            out.push_back({{"name", name}, {"min", r.min}, {"max", r.max}});
        return out;
    };
    auto vocabs = [](const std::vector<std::pair<std::string, std::vector<std::string>>>& v) {
        Json out = Json::array();
        for (const auto& [name, values] : v) out.push_back({{"name", name}, {"values", values}});
        return out;
    };
    j["case_numeric"] = ranges(stats.case_numeric);
    j["case_categorical"] = vocabs(stats.case_categorical);
    j["event_numeric"] = ranges(stats.event_numeric);
    j["event_categorical"] = vocabs(stats.event_categorical);
    j["active_starts_ms"] = stats.active_starts;
    j["active_ends_ms"] = stats.active_ends;
    Json layout = Json::array();
    for (const auto& b : stats.feature_layout())
        layout.push_back({{"name", b.name}, {"begin", b.begin}, {"end", b.end}});
    j["feature_layout"] = std::move(layout);
    return j.dump(2);
}

NormalizationStats stats_from_json(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("bad stats file: ") + e.what());
    }
    if (j.value("schema_version", "") != kDatasetSchemaVersion)
        throw Error(ErrorKind::SchemaVersionMismatch,
                    "stats schema version mismatch: " + j.value("schema_version", ""));
    NormalizationStats s;
    s.max_df_count = j.at("max_df_count").get<long long>();
    s.max_case_duration_seconds = j.at("max_case_duration_seconds").get<double>();
    s.max_concurrent_cases = j.at("max_concurrent_cases").get<long long>();
    for (const auto& e : j.at("event_classes")) {
        EventClass c;
        c.activity = e.at("activity").get<std::string>();
        if (!e.at("lifecycle").is_null()) c.lifecycle = e.at("lifecycle").get<std::string>();
        s.event_classes.push_back(std::move(c));
    }
    for (const auto& e : j.at("case_numeric"))
        s.case_numeric.emplace_back(e.at("name").get<std::string>(),
                                    AttrRange{e.at("min").get<double>(), e.at("max").get<double>()});
    for (const auto& e : j.at("case_categorical"))
        s.case_categorical.emplace_back(e.at("name").get<std::string>(),
                                        e.at("values").get<std::vector<std::string>>());
    for (const auto& e : j.at("event_numeric"))
        s.event_numeric.emplace_back(e.at("name").get<std::string>(),
                                     AttrRange{e.at("min").get<double>(), e.at("max").get<double>()});
    for (const auto& e : j.at("event_categorical"))
        s.event_categorical.emplace_back(e.at("name").get<std::string>(),
                                         e.at("values").get<std::vector<std::string>>());
    s.active_starts = j.at("active_starts_ms").get<std::vector<TimestampMs>>();
    s.active_ends = j.at("active_ends_ms").get<std::vector<TimestampMs>>();
    return s;
}

void save_stats(const NormalizationStats& stats, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << stats_to_json(stats) << '\n';
}

NormalizationStats load_stats(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return stats_from_json(text);
}

} // namespace procgt
