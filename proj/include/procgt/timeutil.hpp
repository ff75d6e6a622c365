#ifndef PROCGT_TIMEUTIL_HPP
#define PROCGT_TIMEUTIL_HPP

#include <cstdint>
#include <optional>
#include <string>

namespace procgt {

// Timestamps are milliseconds since the Unix epoch, UTC. Naive inputs are
// taken as UTC.
using TimestampMs = std::int64_t;

constexpr std::int64_t kMsPerSecond = 1000;
constexpr std::int64_t kMsPerDay = 86400LL * kMsPerSecond;
constexpr std::int64_t kMsPerWeek = 7 * kMsPerDay;

// ISO-8601 subset: YYYY-MM-DD[T ]HH:MM[:SS[.fff]][Z|+HH:MM|-HH:MM]
// Returns nullopt on malformed input.
std::optional<TimestampMs> parse_iso8601(const std::string& text);

// Explicit-format parser supporting %Y %m %d %H %M %S tokens plus literal
// characters; an optional trailing .fff fraction after %S is consumed.
std::optional<TimestampMs> parse_with_format(const std::string& text, const std::string& format);

// Canonical form: YYYY-MM-DDTHH:MM:SS.fffZ
std::string format_iso8601(TimestampMs ms);

// Seconds since midnight UTC / since Monday 00:00 UTC, in [0, day) / [0, week).
double seconds_since_midnight(TimestampMs ms);
double seconds_since_monday(TimestampMs ms);

std::int64_t days_from_civil(int y, unsigned m, unsigned d);
void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d);

} // namespace procgt

#endif
