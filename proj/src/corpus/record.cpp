#include "odsurv/corpus/record.hpp"

#include <charconv>
#include <cstdio>
#include <vector>

namespace odsurv::corpus {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n\v\f";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::string DeathRecord::combined_text() const {
    const auto p = trim(primary_cause), s = trim(secondary_cause);
    if (s.empty()) return std::string(p);
    if (p.empty()) return std::string(s);
    return std::string(p) + " " + std::string(s);
}

namespace {

std::optional<int> to_int(std::string_view s) {
    int v = 0;
    if (s.empty()) return std::nullopt;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

std::optional<std::chrono::year_month_day> make_date(int y, int m, int d) {
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
    if (m < 1 || d < 1 || !ymd.ok()) return std::nullopt;
    return ymd;
}

}  // namespace

std::optional<std::chrono::year_month_day> parse_date(std::string_view text) {
    auto t = trim(text);
    if (t.empty()) return std::nullopt;
    // Drop a time component: "2020-03-01T10:00", "2020-03-01 10:00:00", "3/1/2020 0:00".
    if (auto pos = t.find_first_of("T "); pos != std::string_view::npos) t = t.substr(0, pos);

    if (t.size() == 10 && t[4] == '-' && t[7] == '-') {
        auto y = to_int(t.substr(0, 4)), m = to_int(t.substr(5, 2)), d = to_int(t.substr(8, 2));
        if (y && m && d) return make_date(*y, *m, *d);
        return std::nullopt;
    }
    const auto parts = split(t, '/');
    if (parts.size() != 3) return std::nullopt;
    auto m = to_int(parts[0]), d = to_int(parts[1]), y = to_int(parts[2]);
    if (!m || !d || !y) return std::nullopt;
    if (parts[2].size() == 2) *y += *y < 70 ? 2000 : 1900;
    else if (parts[2].size() != 4) return std::nullopt;
    return make_date(*y, *m, *d);
}

std::string format_date(const std::chrono::year_month_day& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                  static_cast<unsigned>(d.day()));
    return buf;
}

}  // namespace odsurv::corpus
