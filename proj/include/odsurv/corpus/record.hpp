#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace odsurv::corpus {

struct DeathRecord {
    std::string case_id;
    std::string jurisdiction;
    std::optional<int> age;  // years
    std::string gender;
    std::string race;
    std::optional<std::chrono::year_month_day> date_of_death;
    std::string manner_of_death;
    std::string primary_cause;
    std::string secondary_cause;

    // Identity within a dataset. Equals case_id unless the same case_id occurs
    // in more than one jurisdiction, in which case it is "jurisdiction:case_id".
    std::string uid;

    // primary_cause + " " + secondary_cause, trimmed.
    std::string combined_text() const;
};

// ISO-8601 (YYYY-MM-DD, optional time suffix) first, then M/D/YYYY or M/D/YY.
std::optional<std::chrono::year_month_day> parse_date(std::string_view text);
std::string format_date(const std::chrono::year_month_day& d);

std::string_view trim(std::string_view s);

}  // namespace odsurv::corpus
