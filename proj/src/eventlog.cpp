#include "procgt/eventlog.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "procgt/errors.hpp"

namespace procgt {

namespace {

bool parse_number(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto res = std::from_chars(begin, end, out);
    return res.ec == std::errc() && res.ptr == end;
}

std::string number_to_string(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// One CSV record; handles quoted fields with embedded delimiters, quotes
// and newlines. Returns false at end of input. `quoted[i]` records whether
// field i was quoted, so an empty quoted field ("") stays distinguishable
// from an absent value.
bool read_csv_record(std::istream& in, char delim, std::vector<std::string>& fields,
                     std::vector<bool>& quoted) {
    fields.clear();
    quoted.clear();
    std::string field;
    bool in_quotes = false;
    bool field_quoted = false;
    bool any = false;
    int c;
    while ((c = in.get()) != EOF) {
        any = true;
        char ch = static_cast<char>(c);
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"' && field.empty()) {
            in_quotes = true;
            field_quoted = true;
        } else if (ch == delim) {
            fields.push_back(std::move(field));
            quoted.push_back(field_quoted);
            field.clear();
            field_quoted = false;
        } else if (ch == '\n') {
            break;
        } else if (ch == '\r') {
            if (in.peek() == '\n') in.get();
            break;
        } else {
            field.push_back(ch);
        }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    quoted.push_back(field_quoted);
    return true;
}

std::string csv_escape(const std::string& s, char delim, bool force_quote) {
    bool need = force_quote || s.find(delim) != std::string::npos ||
                s.find('"') != std::string::npos || s.find('\n') != std::string::npos ||
                s.find('\r') != std::string::npos;
    if (!need) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

void check_trace_invariants(const EventLog& log) {
    for (const auto& trace : log.traces) {
        TimestampMs prev = trace.events.front().timestamp;
        for (const auto& e : trace.events) {
            if (e.case_id != trace.case_id)
                throw Error(ErrorKind::MalformedXml,
                            "event with mismatched case id in trace " + trace.case_id);
            if (e.timestamp < prev)
                throw Error(ErrorKind::UnparseableTimestamp,
                            "timestamps decrease within trace " + trace.case_id);
            prev = e.timestamp;
        }
    }
}

} // namespace

std::size_t EventLog::total_events() const {
    std::size_t n = 0;
    for (const auto& t : traces) n += t.events.size();
    return n;
}

EventClass event_class_of(const Event& e) { return EventClass{e.activity, e.lifecycle}; }

EventLog parse_csv(const std::string& path, const CsvMapping& mapping, AttributeSchema schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);

    std::vector<std::string> header;
    std::vector<bool> quoted;
    if (!read_csv_record(in, mapping.delimiter, header, quoted))
        throw Error(ErrorKind::EmptyLog, "empty file: " + path);

    auto column_index = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    };
    auto require_column = [&](const std::string& name) {
        auto idx = column_index(name);
        if (!idx) throw Error(ErrorKind::MissingColumn, "missing column: " + name);
        return *idx;
    };

    const std::size_t case_col = require_column(mapping.case_id_column);
    const std::size_t act_col = require_column(mapping.activity_column);
    const std::size_t ts_col = require_column(mapping.timestamp_column);
    std::optional<std::size_t> lc_col;
    if (mapping.lifecycle_column) lc_col = require_column(*mapping.lifecycle_column);

    std::vector<std::size_t> attr_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i == case_col || i == act_col || i == ts_col || (lc_col && i == *lc_col)) continue;
        attr_cols.push_back(i);
    }

    struct RawEvent {
        Event event;
        std::size_t row;
    };
    std::vector<std::string> case_order;
    std::map<std::string, std::vector<RawEvent>> by_case;
    // attribute column -> raw values seen, for kind inference
    std::map<std::string, std::vector<std::string>> raw_attr_values;

    std::vector<std::string> fields;
    std::size_t row = 1;
    while (read_csv_record(in, mapping.delimiter, fields, quoted)) {
        ++row;
        if (fields.size() == 1 && fields[0].empty()) continue; // blank line
        if (fields.size() != header.size())
            throw Error(ErrorKind::Io,
                        "row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        Event e;
        e.case_id = fields[case_col];
        e.activity = fields[act_col];
        if (e.case_id.empty() || e.activity.empty())
            throw Error(ErrorKind::MissingColumn,
                        "row " + std::to_string(row) + ": empty case id or activity");
        std::optional<TimestampMs> ts =
            mapping.timestamp_format.empty()
                ? parse_iso8601(fields[ts_col])
                : parse_with_format(fields[ts_col], mapping.timestamp_format);
        if (!ts)
            throw Error(ErrorKind::UnparseableTimestamp,
                        "row " + std::to_string(row) + ": bad timestamp '" + fields[ts_col] + "'");
        e.timestamp = *ts;
        if (lc_col && !(fields[*lc_col].empty() && !quoted[*lc_col]))
            e.lifecycle = fields[*lc_col];
        for (std::size_t ci : attr_cols) {
            if (fields[ci].empty() && !quoted[ci]) continue; // absent
            e.attrs[header[ci]] = fields[ci];                // typed below
            raw_attr_values[header[ci]].push_back(fields[ci]);
        }
        if (by_case.find(e.case_id) == by_case.end()) case_order.push_back(e.case_id);
        by_case[e.case_id].push_back({std::move(e), row});
    }
    if (case_order.empty()) throw Error(ErrorKind::EmptyLog, "no event rows in " + path);

    // Resolve attribute kinds: schema wins, otherwise infer numeric iff all
    // observed values parse as numbers.
    for (auto& [name, values] : raw_attr_values) {
        if (schema.count(name)) continue;
        bool all_numeric = true;
        double tmp;
        for (const auto& v : values)
            if (!parse_number(v, tmp)) {
                all_numeric = false;
                break;
            }
        schema[name] = AttrSpec{all_numeric ? AttrKind::Numeric : AttrKind::Categorical,
                                AttrScope::EventLevel};
    }

    EventLog log;
    log.schema = std::move(schema);
    for (const auto& cid : case_order) {
        auto& raws = by_case[cid];
        std::stable_sort(raws.begin(), raws.end(), [](const RawEvent& a, const RawEvent& b) {
            return a.event.timestamp < b.event.timestamp;
        });
        Trace trace;
        trace.case_id = cid;
        for (auto& r : raws) {
            for (auto& [name, value] : r.event.attrs) {
                const auto& spec = log.schema.at(name);
                if (spec.kind == AttrKind::Numeric) {
                    double num;
                    if (!parse_number(std::get<std::string>(value), num))
                        throw Error(ErrorKind::Io, "attribute '" + name +
                                                       "' declared numeric but value '" +
                                                       std::get<std::string>(value) +
                                                       "' does not parse");
                    value = num;
                }
            }
            trace.events.push_back(std::move(r.event));
        }
        log.traces.push_back(std::move(trace));
    }
    check_trace_invariants(log);
    return log;
}

EventLog filter_short_traces(const EventLog& log, std::size_t min_events) {
    EventLog out;
    out.schema = log.schema;
    for (const auto& t : log.traces)
        if (t.events.size() >= min_events) out.traces.push_back(t);
    if (out.traces.empty())
        throw Error(ErrorKind::EmptyLog, "no trace has at least " + std::to_string(min_events) +
                                             " events");
    return out;
}

LogStatistics log_statistics(const EventLog& log) {
    if (log.traces.empty()) throw Error(ErrorKind::EmptyLog, "statistics of empty log");
    LogStatistics s;
    s.cases = log.traces.size();
    std::set<EventClass> classes;
    std::set<std::vector<EventClass>> variants;
    double dur_sum = 0.0;
    for (const auto& t : log.traces) {
        s.events += t.events.size();
        s.max_case_length = std::max(s.max_case_length, t.events.size());
        std::vector<EventClass> variant;
        variant.reserve(t.events.size());
        for (const auto& e : t.events) {
            variant.push_back(event_class_of(e));
            classes.insert(variant.back());
        }
        variants.insert(std::move(variant));
        double days = t.duration_seconds() / 86400.0;
        dur_sum += days;
        s.max_case_duration_days = std::max(s.max_case_duration_days, days);
    }
    s.event_classes = classes.size();
    s.variants = variants.size();
    s.avg_case_length = static_cast<double>(s.events) / static_cast<double>(s.cases);
    s.avg_case_duration_days = dur_sum / static_cast<double>(s.cases);
    return s;
}

std::string canonical_csv_string(const EventLog& log) {
    std::vector<std::string> attr_names;
    for (const auto& [name, spec] : log.schema) attr_names.push_back(name);
    std::sort(attr_names.begin(), attr_names.end());

    std::ostringstream out;
    out << "case_id,activity,timestamp,lifecycle";
    for (const auto& n : attr_names) out << ',' << csv_escape(n, ',', false);
    out << '\n';
    for (const auto& trace : log.traces) {
        for (const auto& e : trace.events) {
            out << csv_escape(e.case_id, ',', e.case_id.empty()) << ','
                << csv_escape(e.activity, ',', e.activity.empty()) << ','
                << format_iso8601(e.timestamp) << ',';
            if (e.lifecycle) out << csv_escape(*e.lifecycle, ',', e.lifecycle->empty());
            for (const auto& n : attr_names) {
                out << ',';
                auto it = e.attrs.find(n);
                if (it == e.attrs.end()) continue;
                if (const auto* num = std::get_if<double>(&it->second)) {
                    out << number_to_string(*num);
                } else {
                    const auto& s = std::get<std::string>(it->second);
                    out << csv_escape(s, ',', s.empty());
                }
            }
            out << '\n';
        }
    }
    return out.str();
}

void write_canonical_csv(const EventLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << canonical_csv_string(log);
}

AttributeSchema load_schema_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, "bad schema file " + path + ": " + e.what());
    }
    AttributeSchema schema;
    const auto& attrs = j.contains("attributes") ? j.at("attributes") : j;
    for (auto it = attrs.begin(); it != attrs.end(); ++it) {
        AttrSpec spec;
        const auto& v = it.value();
        std::string kind = v.value("kind", "categorical");
        std::string scope = v.value("scope", "event");
        spec.kind = kind == "numeric" ? AttrKind::Numeric : AttrKind::Categorical;
        spec.scope = (scope == "case" || scope == "case-level") ? AttrScope::CaseLevel
                                                                : AttrScope::EventLevel;
        schema[it.key()] = spec;
    }
    return schema;
}

} // namespace procgt
