#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/common/matrix.hpp"

namespace odsurv::corpus {

struct LabelSchema {
    std::vector<std::string> classes;
    std::vector<std::pair<std::string, std::string>> implication_edges;  // (child, parent)
    std::size_t rare_cutoff = 1000;

    std::size_t size() const noexcept { return classes.size(); }
    std::optional<std::size_t> index_of(const std::string& name) const;
    std::size_t require_index(const std::string& name) const;

    // Throws ConfigError on duplicate classes, unknown edge endpoints or cycles.
    void validate() const;

    // Stable digest of classes and edges; stored with every trained artifact.
    std::string hash() const;
};

// any_opioids, heroin, fentanyl, prescription_opioids, methamphetamine,
// cocaine, benzodiazepines, alcohol, others, any_drugs.
LabelSchema default_schema();

nlohmann::ordered_json to_json(const LabelSchema& schema);
LabelSchema schema_from_json(const nlohmann::json& j);

// Substance names are compared after lowercasing and mapping spaces and
// hyphens to underscores, so "Prescription Opioids" matches the class name.
std::string canonical_class_name(std::string_view name);

// Every substance counted below rare_cutoff goes to "others"; the rest must
// name a schema class.
std::map<std::string, std::string> apply_rare_grouping(const std::map<std::string, std::size_t>& substance_counts,
                                                       const LabelSchema& schema);

}  // namespace odsurv::corpus
