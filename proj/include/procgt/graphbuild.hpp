#ifndef PROCGT_GRAPHBUILD_HPP
#define PROCGT_GRAPHBUILD_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "procgt/eventlog.hpp"
#include "procgt/prefixing.hpp"

namespace procgt {

inline constexpr const char* kDatasetSchemaVersion = "procgt-graph-1";

struct AttrRange {
    double min = 0.0;
    double max = 0.0;
};

struct FeatureBlock {
    std::string name;
    std::size_t begin = 0;
    std::size_t end = 0; // half-open
};

// Everything frozen on the training fold that graph construction needs:
// normalization maxima, attribute ranges and vocabularies, the event-class
// vocabulary, and the training-case activity intervals used by the
// workload feature.
struct NormalizationStats {
    long long max_df_count = 0;
    double max_case_duration_seconds = 0.0;
    long long max_concurrent_cases = 0;

    // id 0 is reserved for UNKNOWN; class i of this list has id i + 1
    std::vector<EventClass> event_classes;

    // sorted by attribute name
    std::vector<std::pair<std::string, AttrRange>> case_numeric;
    std::vector<std::pair<std::string, std::vector<std::string>>> case_categorical;
    std::vector<std::pair<std::string, AttrRange>> event_numeric;
    std::vector<std::pair<std::string, std::vector<std::string>>> event_categorical;

    // training-case activity intervals, each array sorted independently
    std::vector<TimestampMs> active_starts;
    std::vector<TimestampMs> active_ends;

    std::size_t vocab_size() const { return event_classes.size() + 1; }
    int class_id(const EventClass& c) const; // 0 when unseen
    long long active_cases_at(TimestampMs t) const;

    std::vector<FeatureBlock> feature_layout() const;
    std::size_t feature_length() const;
};

struct PrefixGraph {
    std::string case_id;
    std::size_t k = 0;
    std::vector<int> node_class_ids;
    std::vector<std::pair<int, int>> edges; // (source, target) node indices
    std::vector<std::vector<double>> edge_features;
    double target_normalized = 0.0;

    std::size_t node_count() const { return node_class_ids.size(); }
    std::size_t edge_count() const { return edges.size(); }
};

NormalizationStats fit_stats(const std::vector<EventPrefixRecord>& train_records,
                             const EventLog& log);

PrefixGraph build_graph(const EventPrefixRecord& record, const EventLog& log,
                        const NormalizationStats& stats);

std::vector<PrefixGraph> build_dataset(const std::vector<EventPrefixRecord>& records,
                                       const EventLog& log, const NormalizationStats& stats);

// JSON-lines: a schema-version header line, then one graph per line.
void write_dataset(const std::vector<PrefixGraph>& graphs, const std::string& path);
std::vector<PrefixGraph> read_dataset(const std::string& path);

std::string stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const std::string& text);
void save_stats(const NormalizationStats& stats, const std::string& path);
NormalizationStats load_stats(const std::string& path);

} // namespace procgt

#endif
