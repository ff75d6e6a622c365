#ifndef PROCGT_EVENTLOG_HPP
#define PROCGT_EVENTLOG_HPP

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "procgt/timeutil.hpp"

namespace procgt {

// Attribute values are either free text or a real number; which one an
// attribute is, is fixed log-wide by the schema.
using AttrValue = std::variant<std::string, double>;

enum class AttrKind { Numeric, Categorical };
enum class AttrScope { CaseLevel, EventLevel };

struct AttrSpec {
    AttrKind kind = AttrKind::Categorical;
    AttrScope scope = AttrScope::EventLevel;
    bool operator==(const AttrSpec&) const = default;
};

// name -> declared kind and scope; covers every attribute present in the log.
using AttributeSchema = std::map<std::string, AttrSpec>;

struct Event {
    std::string activity;
    std::string case_id;
    TimestampMs timestamp = 0;
    std::optional<std::string> lifecycle;
    std::map<std::string, AttrValue> attrs;

    bool operator==(const Event&) const = default;
};

struct Trace {
    std::string case_id;
    std::vector<Event> events;

    TimestampMs start() const { return events.front().timestamp; }
    TimestampMs end() const { return events.back().timestamp; }
    double duration_seconds() const {
        return static_cast<double>(end() - start()) / kMsPerSecond;
    }

    bool operator==(const Trace&) const = default;
};

struct EventLog {
    std::vector<Trace> traces;
    AttributeSchema schema;

    std::size_t total_events() const;
    bool operator==(const EventLog&) const = default;
};

// Node identity of the graph representation: activity paired with the
// life-cycle transition when present.
struct EventClass {
    std::string activity;
    std::optional<std::string> lifecycle;

    bool operator==(const EventClass&) const = default;
    auto operator<=>(const EventClass&) const = default;
};

EventClass event_class_of(const Event& e);

struct CsvMapping {
    std::string case_id_column = "case_id";
    std::string activity_column = "activity";
    std::string timestamp_column = "timestamp";
    std::optional<std::string> lifecycle_column;
    char delimiter = ',';
    // empty -> ISO-8601; otherwise a %Y%m%d%H%M%S-style format string
    std::string timestamp_format;
};

// Rows are grouped by case id (traces ordered by first appearance) and
// stably sorted by timestamp inside each case, so equal timestamps keep
// file order. Columns not covered by the mapping become attributes; kinds
// missing from `schema` are inferred (numeric iff every value parses).
EventLog parse_csv(const std::string& path, const CsvMapping& mapping, AttributeSchema schema);

// Minimal XES subset: log/trace/event elements with string, date, int,
// float, boolean children. Trace-level attributes other than concept:name
// are attached to every event of the trace with case-level scope.
EventLog parse_xes(const std::string& path);

EventLog filter_short_traces(const EventLog& log, std::size_t min_events = 3);

struct LogStatistics {
    std::size_t cases = 0;
    std::size_t events = 0;
    std::size_t event_classes = 0;
    std::size_t variants = 0;
    double avg_case_length = 0.0;
    std::size_t max_case_length = 0;
    double avg_case_duration_days = 0.0;
    double max_case_duration_days = 0.0;
};

LogStatistics log_statistics(const EventLog& log);

// Canonical export: case_id, activity, timestamp (ISO-8601 UTC), lifecycle,
// then attribute columns sorted by name. Re-parsing with the same schema
// yields an equal EventLog.
void write_canonical_csv(const EventLog& log, const std::string& path);
std::string canonical_csv_string(const EventLog& log);

AttributeSchema load_schema_json(const std::string& path);

} // namespace procgt

#endif
