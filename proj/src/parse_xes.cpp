#include <algorithm>
#include <fstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "procgt/errors.hpp"
#include "procgt/eventlog.hpp"

namespace procgt {

namespace {

namespace pt = boost::property_tree;

struct XesAttr {
    std::string key;
    AttrValue value;
    AttrKind kind;
};

// Reads one <string|date|int|float|boolean key=... value=...> element.
// Returns false for unsupported elements (extension, global, classifier,
// nested lists), which the minimal subset skips.
bool read_attr(const std::string& tag, const pt::ptree& node, XesAttr& out) {
    if (tag != "string" && tag != "date" && tag != "int" && tag != "float" && tag != "boolean")
        return false;
    auto key = node.get_optional<std::string>("<xmlattr>.key");
    auto value = node.get_optional<std::string>("<xmlattr>.value");
    if (!key || !value) return false;
    out.key = *key;
    if (tag == "int" || tag == "float") {
        try {
            out.value = std::stod(*value);
        } catch (const std::exception&) {
            return false;
        }
        out.kind = AttrKind::Numeric;
    } else {
        out.value = *value;
        out.kind = AttrKind::Categorical;
    }
    return true;
}

void note_schema(AttributeSchema& schema, const std::string& key, AttrKind kind, AttrScope scope) {
    auto it = schema.find(key);
    if (it == schema.end()) {
        schema[key] = AttrSpec{kind, scope};
    } else if (it->second.kind != kind) {
        // mixed declarations degrade to categorical text
        it->second.kind = AttrKind::Categorical;
    }
}

} // namespace

EventLog parse_xes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    pt::ptree doc;
    try {
        pt::read_xml(in, doc);
    } catch (const pt::xml_parser_error& e) {
        throw Error(ErrorKind::MalformedXml, std::string("XML parse failure: ") + e.what());
    }
    auto log_node = doc.get_child_optional("log");
    if (!log_node) throw Error(ErrorKind::MalformedXml, "no <log> root element in " + path);

    EventLog log;
    std::size_t anonymous_traces = 0;
    std::size_t event_index = 0; // document-wide, for error reporting

    for (const auto& [trace_tag, trace_node] : *log_node) {
        if (trace_tag != "trace") continue;

        std::vector<XesAttr> case_attrs;
        std::string case_id;
        std::vector<Event> events;

        for (const auto& [tag, node] : trace_node) {
            if (tag == "event") {
                ++event_index;
                Event e;
                bool has_timestamp = false;
                for (const auto& [etag, enode] : node) {
                    XesAttr attr;
                    if (!read_attr(etag, enode, attr)) continue;
                    if (attr.key == "concept:name") {
                        e.activity = std::get<std::string>(attr.value);
                    } else if (attr.key == "time:timestamp") {
                        auto ts = parse_iso8601(std::get<std::string>(attr.value));
                        if (!ts)
                            throw Error(ErrorKind::UnparseableTimestamp,
                                        "event " + std::to_string(event_index) +
                                            ": bad time:timestamp");
                        e.timestamp = *ts;
                        has_timestamp = true;
                    } else if (attr.key == "lifecycle:transition") {
                        e.lifecycle = std::get<std::string>(attr.value);
                    } else {
                        e.attrs[attr.key] = attr.value;
                        note_schema(log.schema, attr.key, attr.kind, AttrScope::EventLevel);
                    }
                }
                if (e.activity.empty() || !has_timestamp)
                    throw Error(ErrorKind::MissingMandatoryAttribute,
                                "event " + std::to_string(event_index) +
                                    " lacks concept:name or time:timestamp");
                events.push_back(std::move(e));
            } else {
                XesAttr attr;
                if (!read_attr(tag, node, attr)) continue;
                if (attr.key == "concept:name") {
                    case_id = std::get<std::string>(attr.value);
                } else {
                    case_attrs.push_back(attr);
                }
            }
        }
        if (events.empty()) continue;
        if (case_id.empty()) case_id = "trace-" + std::to_string(++anonymous_traces);

        Trace trace;
        trace.case_id = case_id;
        for (auto& e : events) {
            e.case_id = case_id;
            for (const auto& attr : case_attrs) {
                e.attrs[attr.key] = attr.value;
                note_schema(log.schema, attr.key, attr.kind, AttrScope::CaseLevel);
            }
        }
        trace.events = std::move(events);
        std::stable_sort(trace.events.begin(), trace.events.end(),
                         [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
        log.traces.push_back(std::move(trace));
    }
    if (log.traces.empty()) throw Error(ErrorKind::EmptyLog, "no traces in " + path);
    return log;
}

} // namespace procgt
