#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace odsurv {

// Delimited table with a header row. Quoted fields follow RFC 4180
// (doubled quotes escape, quoted fields may span lines).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(std::string_view name) const;
};

// Picks tab when the header line contains a tab and no comma.
char sniff_delimiter(std::string_view first_line);

CsvTable read_csv(std::istream& in, std::optional<char> delimiter = std::nullopt);
CsvTable read_csv_file(const std::string& path, std::optional<char> delimiter = std::nullopt);

std::string csv_escape(std::string_view field, char delimiter = ',');
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields, char delimiter = ',');

}  // namespace odsurv
