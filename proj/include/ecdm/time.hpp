#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "ecdm/error.hpp"

namespace ecdm {

/// Civil local time; no timezone conversion is ever applied.
using TimePoint = std::chrono::sys_seconds;
using Date = std::chrono::year_month_day;

namespace detail {

inline bool parse_fixed_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        v = v * 10 + (s[i] - '0');
    }
    out = v;
    return true;
}

} // namespace detail

/// Parses `YYYY-MM-DD`.
inline Date parse_date(std::string_view s) {
    int y = 0, m = 0, d = 0;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !detail::parse_fixed_int(s, 0, 4, y) ||
        !detail::parse_fixed_int(s, 5, 2, m) || !detail::parse_fixed_int(s, 8, 2, d))
        throw ConfigError("invalid date '" + std::string(s) + "' (expected YYYY-MM-DD)");
    Date date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
              std::chrono::day{static_cast<unsigned>(d)}};
    if (!date.ok()) throw ConfigError("invalid date '" + std::string(s) + "'");
    return date;
}

/// Parses ISO-8601 `YYYY-MM-DD[T| ]HH:MM[:SS][Z]`. Offsets other than Z are rejected.
inline TimePoint parse_timestamp(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
    if (s.size() < 16 || (s[10] != 'T' && s[10] != ' ') || s[13] != ':')
        throw IoError("invalid timestamp '" + std::string(s) + "'");
    const Date date = parse_date(s.substr(0, 10));
    int hh = 0, mm = 0, ss = 0;
    bool ok = detail::parse_fixed_int(s, 11, 2, hh) && detail::parse_fixed_int(s, 14, 2, mm);
    if (ok && s.size() > 16) ok = s.size() == 19 && s[16] == ':' && detail::parse_fixed_int(s, 17, 2, ss);
    if (!ok || hh > 23 || mm > 59 || ss > 59) throw IoError("invalid timestamp '" + std::string(s) + "'");
    return TimePoint{std::chrono::sys_days{date}} + std::chrono::hours{hh} + std::chrono::minutes{mm} +
           std::chrono::seconds{ss};
}

inline std::string format_timestamp(TimePoint tp) {
    const auto day = std::chrono::floor<std::chrono::days>(tp);
    const Date date{day};
    const auto secs = (tp - day).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld", int(date.year()), unsigned(date.month()),
                  unsigned(date.day()), static_cast<long long>(secs / 3600), static_cast<long long>(secs / 60 % 60),
                  static_cast<long long>(secs % 60));
    return buf;
}

inline std::string format_date(Date date) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(date.year()), unsigned(date.month()), unsigned(date.day()));
    return buf;
}

/// Monday = 0 ... Sunday = 6.
inline int weekday_index(Date date) {
    return static_cast<int>(std::chrono::weekday{std::chrono::sys_days{date}}.iso_encoding()) - 1;
}

inline Date add_days(Date date, int n) { return Date{std::chrono::sys_days{date} + std::chrono::days{n}}; }

inline int days_between(Date from, Date to) {
    return static_cast<int>((std::chrono::sys_days{to} - std::chrono::sys_days{from}).count());
}

} // namespace ecdm
