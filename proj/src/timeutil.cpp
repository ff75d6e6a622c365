#include "procgt/timeutil.hpp"

#include <array>
#include <charconv>
#include <cstdio>

namespace procgt {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if (a % b != 0 && ((a < 0) != (b < 0))) --q;
    return q;
}

std::int64_t floor_mod(std::int64_t a, std::int64_t b) { return a - floor_div(a, b) * b; }

bool read_digits(const std::string& s, std::size_t& pos, int count, int& out) {
    if (pos + count > s.size()) return false;
    int v = 0;
    for (int i = 0; i < count; ++i) {
        char c = s[pos + i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    pos += count;
    out = v;
    return true;
}

bool valid_date(int y, int m, int d) {
    if (m < 1 || m > 12 || d < 1) return false;
    static constexpr std::array<int, 12> days = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int dim = days[m - 1];
    if (m == 2) {
        bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        if (leap) dim = 29;
    }
    return d <= dim;
}

// Consumes an optional .fff / ,fff fraction, truncated to milliseconds.
int read_fraction_ms(const std::string& s, std::size_t& pos) {
    if (pos >= s.size() || (s[pos] != '.' && s[pos] != ',')) return 0;
    std::size_t start = ++pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) return 0;
    int ms = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        ms = ms * 10 + (start + i < pos ? s[start + i] - '0' : 0);
    }
    return ms;
}

} // namespace

std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = static_cast<int>(yy + (m <= 2));
}

std::optional<TimestampMs> parse_iso8601(const std::string& text) {
    std::size_t pos = 0;
    int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
    if (!read_digits(text, pos, 4, year)) return std::nullopt;
    if (pos >= text.size() || text[pos] != '-') return std::nullopt;
    ++pos;
    if (!read_digits(text, pos, 2, month)) return std::nullopt;
    if (pos >= text.size() || text[pos] != '-') return std::nullopt;
    ++pos;
    if (!read_digits(text, pos, 2, day)) return std::nullopt;
    if (!valid_date(year, month, day)) return std::nullopt;
    if (pos >= text.size() || (text[pos] != 'T' && text[pos] != ' ')) return std::nullopt;
    ++pos;
    if (!read_digits(text, pos, 2, hour)) return std::nullopt;
    if (pos >= text.size() || text[pos] != ':') return std::nullopt;
    ++pos;
    if (!read_digits(text, pos, 2, minute)) return std::nullopt;
    int ms = 0;
    if (pos < text.size() && text[pos] == ':') {
        ++pos;
        if (!read_digits(text, pos, 2, second)) return std::nullopt;
        ms = read_fraction_ms(text, pos);
    }
    if (hour > 23 || minute > 59 || second > 60) return std::nullopt;

    std::int64_t offset_min = 0;
    if (pos < text.size()) {
        char c = text[pos];
        if (c == 'Z') {
            ++pos;
        } else if (c == '+' || c == '-') {
            ++pos;
            int oh = 0, om = 0;
            if (!read_digits(text, pos, 2, oh)) return std::nullopt;
            if (pos < text.size() && text[pos] == ':') ++pos;
            if (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
                if (!read_digits(text, pos, 2, om)) return std::nullopt;
            }
            offset_min = oh * 60 + om;
            if (c == '-') offset_min = -offset_min;
        } else {
            return std::nullopt;
        }
    }
    if (pos != text.size()) return std::nullopt;

    std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
    std::int64_t total =
        days * kMsPerDay + (hour * 3600LL + minute * 60LL + second) * kMsPerSecond + ms;
    total -= offset_min * 60LL * kMsPerSecond;
    return total;
}

std::optional<TimestampMs> parse_with_format(const std::string& text, const std::string& format) {
    std::size_t pos = 0;
    int year = 1970, month = 1, day = 1, hour = 0, minute = 0, second = 0;
    bool saw_seconds = false;
    for (std::size_t fi = 0; fi < format.size(); ++fi) {
        if (format[fi] == '%' && fi + 1 < format.size()) {
            char tok = format[++fi];
            bool ok = true;
            switch (tok) {
                case 'Y': ok = read_digits(text, pos, 4, year); break;
                case 'm': ok = read_digits(text, pos, 2, month); break;
                case 'd': ok = read_digits(text, pos, 2, day); break;
                case 'H': ok = read_digits(text, pos, 2, hour); break;
                case 'M': ok = read_digits(text, pos, 2, minute); break;
                case 'S':
                    ok = read_digits(text, pos, 2, second);
                    saw_seconds = true;
                    break;
                case '%':
                    ok = pos < text.size() && text[pos] == '%';
                    if (ok) ++pos;
                    break;
                default: return std::nullopt;
            }
            if (!ok) return std::nullopt;
        } else {
            if (pos >= text.size() || text[pos] != format[fi]) return std::nullopt;
            ++pos;
        }
    }
    int ms = 0;
    if (saw_seconds) ms = read_fraction_ms(text, pos);
    if (pos != text.size()) return std::nullopt;
    if (!valid_date(year, month, day) || hour > 23 || minute > 59 || second > 60) return std::nullopt;
    std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
    return days * kMsPerDay + (hour * 3600LL + minute * 60LL + second) * kMsPerSecond + ms;
}

std::string format_iso8601(TimestampMs ms) {
    std::int64_t days = floor_div(ms, kMsPerDay);
    std::int64_t rem = floor_mod(ms, kMsPerDay);
    int y;
    unsigned mo, d;
    civil_from_days(days, y, mo, d);
    int hour = static_cast<int>(rem / (3600 * kMsPerSecond));
    rem %= 3600 * kMsPerSecond;
    int minute = static_cast<int>(rem / (60 * kMsPerSecond));
    rem %= 60 * kMsPerSecond;
    int second = static_cast<int>(rem / kMsPerSecond);
    int milli = static_cast<int>(rem % kMsPerSecond);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", y, mo, d, hour, minute,
                  second, milli);
    return buf;
}

double seconds_since_midnight(TimestampMs ms) {
    return static_cast<double>(floor_mod(ms, kMsPerDay)) / kMsPerSecond;
}

double seconds_since_monday(TimestampMs ms) {
    // The epoch fell on a Thursday; Monday of that week is 3 days earlier.
    return static_cast<double>(floor_mod(ms + 3 * kMsPerDay, kMsPerWeek)) / kMsPerSecond;
}

} // namespace procgt
