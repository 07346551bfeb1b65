#include "odsurv/common/csv.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "odsurv/common/error.hpp"

namespace odsurv {

std::optional<std::size_t> CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    return std::nullopt;
}

char sniff_delimiter(std::string_view first_line) {
    const bool has_tab = first_line.find('\t') != std::string_view::npos;
    const bool has_comma = first_line.find(',') != std::string_view::npos;
    return (has_tab && !has_comma) ? '\t' : ',';
}

namespace {

// Reads one logical record; returns false at end of input.
bool read_record(std::istream& in, char delim, std::vector<std::string>& out, std::size_t& line_no) {
    out.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line_no;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            in_quotes = true;
        } else if (c == delim) {
            out.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            ++line_no;
            if (!field.empty() && field.back() == '\r') field.pop_back();
            out.push_back(std::move(field));
            return true;
        } else {
            field.push_back(c);
        }
    }
    if (in_quotes) throw ParseError("unterminated quoted field near line " + std::to_string(line_no + 1));
    if (!any) return false;
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(std::move(field));
    return true;
}

}  // namespace

CsvTable read_csv(std::istream& in, std::optional<char> delimiter) {
    CsvTable table;
    std::string first;
    if (!std::getline(in, first)) return table;
    if (!first.empty() && first.back() == '\r') first.pop_back();
    if (first.size() >= 3 && first.compare(0, 3, "\xEF\xBB\xBF") == 0) first.erase(0, 3);
    const char delim = delimiter.value_or(sniff_delimiter(first));

    std::istringstream header_stream(first + "\n");
    std::size_t line_no = 0;
    read_record(header_stream, delim, table.header, line_no);

    line_no = 1;
    std::vector<std::string> row;
    while (read_record(in, delim, row, line_no)) {
        if (row.size() == 1 && row[0].empty()) continue;  // blank line
        if (row.size() != table.header.size())
            throw ParseError("row at line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                             " fields, header has " + std::to_string(table.header.size()));
        table.rows.push_back(row);
    }
    return table;
}

CsvTable read_csv_file(const std::string& path, std::optional<char> delimiter) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path + "'");
    return read_csv(in, delimiter);
}

std::string csv_escape(std::string_view field, char delimiter) {
    const bool needs = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string_view::npos;
    if (!needs) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields, char delimiter) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << delimiter;
        out << csv_escape(fields[i], delimiter);
    }
    out << '\n';
}

}  // namespace odsurv
