#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "procgt/errors.hpp"
#include "procgt/eventlog.hpp"
#include "test_support.hpp"

using namespace procgt;
using namespace procgt::testing;

namespace {

EventLog parse_csv_text(const std::string& text, const CsvMapping& mapping = {},
                        AttributeSchema schema = {}) {
    auto dir = scratch_dir("eventlog_csv");
    auto path = dir / "log.csv";
    write_text(path, text);
    return parse_csv(path.string(), mapping, std::move(schema));
}

} // namespace

TEST_CASE("rows group by case in first-appearance order and sort by timestamp") {
    // c2 appears first in the file but its rows are out of time order.
    const EventLog log = parse_csv_text("case_id,activity,timestamp\n"
                                        "c2,B,2024-01-01T10:00:00Z\n"
                                        "c1,A,2024-01-01T09:00:00Z\n"
                                        "c2,A,2024-01-01T08:00:00Z\n"
                                        "c1,B,2024-01-01T11:00:00Z\n");
    REQUIRE(log.traces.size() == 2);
    CHECK(log.traces[0].case_id == "c2");
    CHECK(log.traces[0].events[0].activity == "A");
    CHECK(log.traces[0].events[1].activity == "B");
    CHECK(log.traces[1].case_id == "c1");
    CHECK(log.total_events() == 4);
}

TEST_CASE("equal timestamps keep file order (stable sort)") {
    const EventLog log = parse_csv_text("case_id,activity,timestamp\n"
                                        "c,X,2024-01-01T09:00:00Z\n"
                                        "c,Y,2024-01-01T09:00:00Z\n"
                                        "c,Z,2024-01-01T09:00:00Z\n");
    CHECK(log.traces[0].events[0].activity == "X");
    CHECK(log.traces[0].events[1].activity == "Y");
    CHECK(log.traces[0].events[2].activity == "Z");
}

TEST_CASE("attribute kinds are inferred: numeric iff every value parses") {
    const EventLog log = parse_csv_text("case_id,activity,timestamp,cost,grade\n"
                                        "c,A,2024-01-01T09:00:00Z,12.5,7\n"
                                        "c,B,2024-01-01T10:00:00Z,3,x7\n");
    CHECK(log.schema.at("cost") == AttrSpec{AttrKind::Numeric, AttrScope::EventLevel});
    CHECK(log.schema.at("grade") == AttrSpec{AttrKind::Categorical, AttrScope::EventLevel});
    CHECK(std::get<double>(log.traces[0].events[0].attrs.at("cost")) == 12.5);
    CHECK(std::get<std::string>(log.traces[0].events[1].attrs.at("grade")) == "x7");
}

TEST_CASE("an explicit schema overrides inference") {
    AttributeSchema schema;
    schema["cost"] = {AttrKind::Categorical, AttrScope::CaseLevel};
    const EventLog log = parse_csv_text("case_id,activity,timestamp,cost\n"
                                        "c,A,2024-01-01T09:00:00Z,12.5\n",
                                        {}, schema);
    CHECK(log.schema.at("cost") == AttrSpec{AttrKind::Categorical, AttrScope::CaseLevel});
    CHECK(std::get<std::string>(log.traces[0].events[0].attrs.at("cost")) == "12.5");
}

TEST_CASE("bare empty cell means absent; quoted empty cell is an empty string") {
    const EventLog log = parse_csv_text("case_id,activity,timestamp,note\n"
                                        "c,A,2024-01-01T09:00:00Z,\n"
                                        "c,B,2024-01-01T10:00:00Z,\"\"\n");
    CHECK(log.traces[0].events[0].attrs.count("note") == 0);
    REQUIRE(log.traces[0].events[1].attrs.count("note") == 1);
    CHECK(std::get<std::string>(log.traces[0].events[1].attrs.at("note")).empty());
}

TEST_CASE("quoted fields carry delimiters, escaped quotes, and newlines") {
    const EventLog log = parse_csv_text("case_id,activity,timestamp,note\n"
                                        "c,\"Review, final\",2024-01-01T09:00:00Z,"
                                        "\"say \"\"hi\"\"\nthen stop\"\n");
    CHECK(log.traces[0].events[0].activity == "Review, final");
    CHECK(std::get<std::string>(log.traces[0].events[0].attrs.at("note")) ==
          "say \"hi\"\nthen stop");
}

TEST_CASE("lifecycle column feeds the event class; empty stays unset") {
    CsvMapping mapping;
    mapping.lifecycle_column = "lifecycle";
    const EventLog log = parse_csv_text("case_id,activity,timestamp,lifecycle\n"
                                        "c,A,2024-01-01T09:00:00Z,start\n"
                                        "c,A,2024-01-01T10:00:00Z,complete\n"
                                        "c,B,2024-01-01T11:00:00Z,\n",
                                        mapping);
    const auto& ev = log.traces[0].events;
    CHECK(ev[0].lifecycle == std::optional<std::string>("start"));
    CHECK(ev[1].lifecycle == std::optional<std::string>("complete"));
    CHECK_FALSE(ev[2].lifecycle.has_value());
    CHECK(event_class_of(ev[0]) != event_class_of(ev[1]));
    CHECK(event_class_of(ev[0]) == (EventClass{"A", "start"}));
}

TEST_CASE("custom delimiter and timestamp format") {
    auto dir = scratch_dir("eventlog_fmt");
    auto path = dir / "log.csv";
    write_text(path, "case_id;activity;timestamp\n"
                     "c;A;20240101090000\n"
                     "c;B;20240101100000\n");
    CsvMapping mapping;
    mapping.delimiter = ';';
    mapping.timestamp_format = "%Y%m%d%H%M%S";
    const EventLog log = parse_csv(path.string(), mapping, {});
    CHECK(log.traces[0].events[0].timestamp == parse_iso8601("2024-01-01T09:00:00Z").value());
}

TEST_CASE("parse errors carry the failing row and a typed kind") {
    CHECK_THROWS_WITH_AS(parse_csv_text("case_id,activity,timestamp\n"
                                        "c,A,notatime\n"),
                         "row 2: bad timestamp 'notatime'", Error);
    try {
        parse_csv_text("case_id,activity,timestamp\nc,A,notatime\n");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnparseableTimestamp);
        CHECK(e.exit_code() == 2);
    }

    CHECK_THROWS_AS(parse_csv_text("case_id,activity\nc,A\n"), Error); // missing timestamp col
    CHECK_THROWS_AS(parse_csv_text("case_id,activity,timestamp\n"), Error); // no rows
    CHECK_THROWS_AS(parse_csv_text("case_id,activity,timestamp\nc,A\n"), Error); // short row
    CHECK_THROWS_AS(parse_csv_text("case_id,activity,timestamp\n,A,2024-01-01T09:00:00Z\n"),
                    Error); // empty case id
}

TEST_CASE("numeric declaration with a non-numeric value is rejected") {
    AttributeSchema schema;
    schema["cost"] = {AttrKind::Numeric, AttrScope::EventLevel};
    CHECK_THROWS_AS(parse_csv_text("case_id,activity,timestamp,cost\n"
                                   "c,A,2024-01-01T09:00:00Z,cheap\n",
                                   {}, schema),
                    Error);
}

TEST_CASE("canonical CSV round-trips an attribute-rich log byte-for-byte") {
    EventLog log = random_log(11, 12, 3, 9, 4, true);
    auto dir = scratch_dir("eventlog_roundtrip");
    auto path = dir / "canon.csv";
    write_canonical_csv(log, path.string());

    CsvMapping mapping;
    mapping.lifecycle_column = "lifecycle";
    const EventLog back = parse_csv(path.string(), mapping, log.schema);
    CHECK(back == log);

    // Writing the re-parsed log reproduces the same bytes.
    auto path2 = dir / "canon2.csv";
    write_canonical_csv(back, path2.string());
    CHECK(read_text(path) == read_text(path2));
}

TEST_CASE("XES traces inherit case attributes with case scope") {
    auto dir = scratch_dir("eventlog_xes");
    auto path = dir / "log.xes";
    write_text(path, R"(<?xml version="1.0" encoding="UTF-8"?>
<log xes.version="1.0">
  <trace>
    <string key="concept:name" value="t1"/>
    <string key="channel" value="web"/>
    <event>
      <string key="concept:name" value="Register"/>
      <date key="time:timestamp" value="2024-01-01T09:00:00.000Z"/>
      <string key="lifecycle:transition" value="complete"/>
      <int key="points" value="3"/>
    </event>
    <event>
      <string key="concept:name" value="Close"/>
      <date key="time:timestamp" value="2024-01-01T08:00:00.000Z"/>
      <float key="points" value="2.5"/>
    </event>
  </trace>
  <trace>
    <event>
      <string key="concept:name" value="Register"/>
      <date key="time:timestamp" value="2024-01-02T09:00:00.000Z"/>
    </event>
  </trace>
</log>
)");
    const EventLog log = parse_xes(path.string());
    REQUIRE(log.traces.size() == 2);
    const Trace& t1 = log.traces[0];
    CHECK(t1.case_id == "t1");
    REQUIRE(t1.events.size() == 2);
    // events re-sorted by timestamp: Close (08:00) before Register (09:00)
    CHECK(t1.events[0].activity == "Close");
    CHECK(t1.events[1].activity == "Register");
    CHECK(t1.events[1].lifecycle == std::optional<std::string>("complete"));
    CHECK(std::get<std::string>(t1.events[0].attrs.at("channel")) == "web");
    CHECK(std::get<double>(t1.events[0].attrs.at("points")) == 2.5);
    CHECK(log.schema.at("channel") == AttrSpec{AttrKind::Categorical, AttrScope::CaseLevel});
    CHECK(log.schema.at("points") == AttrSpec{AttrKind::Numeric, AttrScope::EventLevel});
    // nameless trace gets a generated id
    CHECK(log.traces[1].case_id == "trace-1");
}

TEST_CASE("XES errors: malformed XML, missing root, missing mandatory fields") {
    auto dir = scratch_dir("eventlog_xes_bad");
    auto bad = [&](const std::string& name, const std::string& text, ErrorKind kind) {
        auto p = dir / name;
        write_text(p, text);
        try {
            parse_xes(p.string());
            FAIL_CHECK("expected a parse error for " << name);
        } catch (const Error& e) {
            CHECK(e.kind() == kind);
        }
    };
    bad("truncated.xes", "<log><trace><event>", ErrorKind::MalformedXml);
    bad("noroot.xes", "<notes/>", ErrorKind::MalformedXml);
    bad("noevents.xes", "<log><trace/></log>", ErrorKind::EmptyLog);
    bad("noname.xes",
        "<log><trace><event>"
        "<date key=\"time:timestamp\" value=\"2024-01-01T09:00:00Z\"/>"
        "</event></trace></log>",
        ErrorKind::MissingMandatoryAttribute);
    bad("badstamp.xes",
        "<log><trace><event>"
        "<string key=\"concept:name\" value=\"A\"/>"
        "<date key=\"time:timestamp\" value=\"yesterday\"/>"
        "</event></trace></log>",
        ErrorKind::UnparseableTimestamp);
}

TEST_CASE("filter_short_traces keeps length >= 3 and rejects an empty result") {
    EventLog log = random_log(3, 6, 3, 8);
    Trace tiny;
    tiny.case_id = "tiny";
    tiny.events.resize(2);
    for (auto& e : tiny.events) {
        e.case_id = "tiny";
        e.activity = "A";
        e.timestamp = parse_iso8601("2024-01-01T00:00:00Z").value();
    }
    log.traces.push_back(tiny);

    const EventLog kept = filter_short_traces(log);
    CHECK(kept.traces.size() == 6);
    for (const auto& t : kept.traces) CHECK(t.events.size() >= 3);

    EventLog only_tiny;
    only_tiny.traces.push_back(tiny);
    CHECK_THROWS_AS(filter_short_traces(only_tiny), Error);
}

TEST_CASE("log statistics match hand counts") {
    const EventLog log = parse_csv_text("case_id,activity,timestamp\n"
                                        "c1,A,2024-01-01T00:00:00Z\n"
                                        "c1,B,2024-01-02T00:00:00Z\n"
                                        "c1,C,2024-01-03T00:00:00Z\n"
                                        "c2,A,2024-01-01T00:00:00Z\n"
                                        "c2,B,2024-01-01T12:00:00Z\n"
                                        "c2,C,2024-01-02T00:00:00Z\n"
                                        "c3,A,2024-01-01T00:00:00Z\n"
                                        "c3,C,2024-01-05T00:00:00Z\n");
    const LogStatistics s = log_statistics(log);
    CHECK(s.cases == 3);
    CHECK(s.events == 8);
    CHECK(s.event_classes == 3);
    CHECK(s.variants == 2); // ABC twice, AC once
    CHECK(s.avg_case_length == doctest::Approx(8.0 / 3.0));
    CHECK(s.max_case_length == 3);
    CHECK(s.avg_case_duration_days == doctest::Approx((2.0 + 1.0 + 4.0) / 3.0));
    CHECK(s.max_case_duration_days == doctest::Approx(4.0));
}

TEST_CASE("schema JSON accepts both flat and wrapped forms") {
    auto dir = scratch_dir("eventlog_schema");
    auto p1 = dir / "flat.json";
    write_text(p1, R"({"amount": {"kind": "numeric", "scope": "case"},
                       "team": {"kind": "categorical"}})");
    AttributeSchema s1 = load_schema_json(p1.string());
    CHECK(s1.at("amount") == AttrSpec{AttrKind::Numeric, AttrScope::CaseLevel});
    CHECK(s1.at("team") == AttrSpec{AttrKind::Categorical, AttrScope::EventLevel});

    auto p2 = dir / "wrapped.json";
    write_text(p2, R"({"attributes": {"amount": {"kind": "numeric", "scope": "case-level"}}})");
    AttributeSchema s2 = load_schema_json(p2.string());
    CHECK(s2.at("amount") == AttrSpec{AttrKind::Numeric, AttrScope::CaseLevel});

    auto p3 = dir / "bad.json";
    write_text(p3, "{not json");
    CHECK_THROWS_AS(load_schema_json(p3.string()), Error);
}
