#include "odsurv/corpus/schema.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>

#include "odsurv/common/error.hpp"
#include "odsurv/common/hash.hpp"

namespace odsurv::corpus {

std::optional<std::size_t> LabelSchema::index_of(const std::string& name) const {
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) return std::nullopt;
    return static_cast<std::size_t>(it - classes.begin());
}

std::size_t LabelSchema::require_index(const std::string& name) const {
    auto i = index_of(name);
    if (!i) throw ConfigError("class '" + name + "' is not in the label schema");
    return *i;
}

void LabelSchema::validate() const {
    if (classes.empty()) throw ConfigError("label schema has no classes");
    std::set<std::string> seen;
    for (const auto& c : classes)
        if (!seen.insert(c).second) throw ConfigError("duplicate class '" + c + "' in label schema");
    std::vector<std::vector<std::size_t>> adj(classes.size());
    for (const auto& [child, parent] : implication_edges) adj[require_index(child)].push_back(require_index(parent));

    // 0 = unvisited, 1 = on stack, 2 = done
    std::vector<int> state(classes.size(), 0);
    std::function<void(std::size_t)> visit = [&](std::size_t u) {
        state[u] = 1;
        for (auto v : adj[u]) {
            if (state[v] == 1) throw ConfigError("implication edges contain a cycle through '" + classes[v] + "'");
            if (state[v] == 0) visit(v);
        }
        state[u] = 2;
    };
    for (std::size_t u = 0; u < classes.size(); ++u)
        if (state[u] == 0) visit(u);
}

std::string LabelSchema::hash() const {
    std::string buf = "classes:";
    for (const auto& c : classes) buf += c + ",";
    buf += "|edges:";
    for (const auto& [a, b] : implication_edges) buf += a + ">" + b + ",";
    return sha256_hex(buf);
}

LabelSchema default_schema() {
    LabelSchema s;
    s.classes = {"any_opioids", "heroin",          "fentanyl", "prescription_opioids", "methamphetamine",
                 "cocaine",     "benzodiazepines", "alcohol",  "others",               "any_drugs"};
    for (const char* child : {"heroin", "fentanyl", "prescription_opioids"})
        s.implication_edges.emplace_back(child, "any_opioids");
    for (const auto& c : s.classes)
        if (c != "any_drugs") s.implication_edges.emplace_back(c, "any_drugs");
    s.rare_cutoff = 1000;
    return s;
}

nlohmann::ordered_json to_json(const LabelSchema& schema) {
    nlohmann::ordered_json j;
    j["classes"] = schema.classes;
    auto edges = nlohmann::ordered_json::array();
    for (const auto& [c, p] : schema.implication_edges) edges.push_back({c, p});
    j["implication_edges"] = edges;
    j["rare_cutoff"] = schema.rare_cutoff;
    return j;
}

LabelSchema schema_from_json(const nlohmann::json& j) {
    LabelSchema s = default_schema();
    if (j.contains("classes")) {
        s.classes = j.at("classes").get<std::vector<std::string>>();
        s.implication_edges.clear();
    }
    if (j.contains("implication_edges")) {
        s.implication_edges.clear();
        for (const auto& e : j.at("implication_edges")) {
            if (!e.is_array() || e.size() != 2) throw ConfigError("implication edge must be a [child, parent] pair");
            s.implication_edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
        }
    }
    s.rare_cutoff = j.value("rare_cutoff", s.rare_cutoff);
    s.validate();
    return s;
}

std::string canonical_class_name(std::string_view name) {
    std::string out;
    for (char c : name) {
        if (c == ' ' || c == '-') out.push_back('_');
        else out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::map<std::string, std::string> apply_rare_grouping(const std::map<std::string, std::size_t>& substance_counts,
                                                       const LabelSchema& schema) {
    if (!schema.index_of("others")) throw ConfigError("rare grouping needs an 'others' class in the schema");
    std::map<std::string, std::string> out;
    std::vector<std::string> unmapped;
    for (const auto& [name, count] : substance_counts) {
        if (count < schema.rare_cutoff) {
            out[name] = "others";
            continue;
        }
        const auto canon = canonical_class_name(name);
        if (schema.index_of(canon)) out[name] = canon;
        else unmapped.push_back(name);
    }
    if (!unmapped.empty()) {
        std::string msg = "substances at or above the rare cutoff have no schema class:";
        for (const auto& n : unmapped) msg += " " + n;
        throw ConfigError(msg);
    }
    return out;
}

}  // namespace odsurv::corpus
