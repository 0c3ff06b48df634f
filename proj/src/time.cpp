#include "fundus/time.hpp"

#include <cstdio>

namespace fundus {

using namespace std::chrono;

std::string format_timestamp(Timestamp t) {
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), int(hms.hours().count()),
                  int(hms.minutes().count()), int(hms.seconds().count()));
    return buf;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    std::string_view tail;
    if (text.size() == 20 && text.back() == 'Z') {
        tail = text.substr(19);
    } else if (text.size() == 25 && text.substr(19) == "+00:00") {
        tail = text.substr(19);
    } else {
        return std::nullopt;
    }
    const std::string head(text.substr(0, 19));
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char t = 0;
    int consumed = 0;
    if (std::sscanf(head.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &t, &h, &mi, &s,
                    &consumed) != 7 ||
        consumed != 19 || (t != 'T' && t != 't'))
        return std::nullopt;
    if (head[4] != '-' || head[7] != '-' || head[13] != ':' || head[16] != ':')
        return std::nullopt;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                             day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59 || h < 0 || mi < 0 || s < 0)
        return std::nullopt;
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

Timestamp now_utc() { return floor<seconds>(system_clock::now()); }

} // namespace fundus
