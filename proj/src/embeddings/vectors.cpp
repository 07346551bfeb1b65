#include "odsurv/embeddings/vectors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>

#include "odsurv/common/error.hpp"

namespace odsurv::embeddings {

const char* to_string(Backend b) {
    switch (b) {
        case Backend::Static: return "static";
        case Backend::Cui: return "cui";
        case Backend::Contextual: return "contextual";
    }
    return "?";
}

Backend backend_from_string(const std::string& s) {
    if (s == "static") return Backend::Static;
    if (s == "cui") return Backend::Cui;
    if (s == "contextual") return Backend::Contextual;
    throw ConfigError("unknown embedding backend '" + s + "'");
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

bool VectorTable::add(std::string_view token, std::span<const double> values) {
    if (values.size() != dim_) throw ShapeError("vector width differs from table dimension");
    auto key = lower(token);
    if (index_.contains(key)) return false;
    index_.emplace(key, tokens_.size());
    tokens_.push_back(std::move(key));
    data_.insert(data_.end(), values.begin(), values.end());
    return true;
}

const double* VectorTable::find(std::string_view token) const {
    auto it = index_.find(lower(token));
    if (it == index_.end()) return nullptr;
    return data_.data() + it->second * dim_;
}

VectorTable parse_vector_table(std::istream& in, const std::string& source_name) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> values;
    VectorTable table;
    bool have_dim = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos || sp == 0)
            throw ParseError(source_name + ":" + std::to_string(line_no) + ": expected 'token v1 v2 ...'");
        values.clear();
        const char* p = line.data() + sp;
        const char* end = line.data() + line.size();
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            double v = 0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{})
                throw ParseError(source_name + ":" + std::to_string(line_no) + ": malformed number");
            values.push_back(v);
            p = next;
        }
        if (!have_dim) {
            if (values.empty()) throw ParseError(source_name + ":" + std::to_string(line_no) + ": no vector values");
            table = VectorTable(values.size());
            have_dim = true;
        }
        if (values.size() != table.dim())
            throw ParseError(source_name + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.dim()) +
                             " values, found " + std::to_string(values.size()));
        table.add(std::string_view(line.data(), sp), values);
    }
    if (!have_dim) throw ParseError(source_name + ": empty vector table");
    return table;
}

VectorTable load_vector_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open vector table '" + path + "'");
    return parse_vector_table(in, path);
}

std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        while (!cur.empty() && (cur.back() == '-' || cur.back() == '\'')) cur.pop_back();
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if ((ch == '-' || ch == '\'') && !cur.empty()) {
            cur.push_back(ch);
        } else {
            flush();
        }
    }
    flush();
    return out;
}

DocumentVector mean_pool(std::span<const std::string> tokens, const VectorTable& table, Backend tag) {
    DocumentVector dv;
    dv.backend = tag;
    dv.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim()));
    std::vector<const double*> hits;
    for (const auto& t : tokens) {
        if (const double* v = table.find(t)) hits.push_back(v);
        else ++dv.oov_count;
    }
    // Summing in table order makes the result independent of token order,
    // bit for bit.
    std::sort(hits.begin(), hits.end());
    for (const double* v : hits) dv.values += Eigen::Map<const Eigen::VectorXd>(v, static_cast<Eigen::Index>(table.dim()));
    dv.in_vocabulary = hits.size();
    if (dv.in_vocabulary == 0) dv.all_oov = true;
    else dv.values /= static_cast<double>(dv.in_vocabulary);
    return dv;
}

}  // namespace odsurv::embeddings
