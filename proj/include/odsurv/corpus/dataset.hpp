#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/common/csv.hpp"
#include "odsurv/common/matrix.hpp"
#include "odsurv/corpus/record.hpp"
#include "odsurv/corpus/schema.hpp"
#include "odsurv/corpus/text.hpp"

namespace odsurv::corpus {

// DeathRecord field name -> source column name. case_id and primary_cause
// are required; unmapped optional fields stay empty.
struct SchemaMap {
    std::map<std::string, std::string> columns;
    std::optional<char> delimiter;

    static SchemaMap identity();
    static SchemaMap from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
};

struct Exclusion {
    std::size_t row = 0;  // 1-based data row (header excluded)
    std::string case_id;
    std::string reason;
};

struct IngestResult {
    std::vector<DeathRecord> records;
    std::vector<Exclusion> excluded;
    std::size_t input_rows = 0;
    std::vector<std::string> warnings;

    nlohmann::ordered_json report_json() const;
};

IngestResult ingest_table(const CsvTable& table, const SchemaMap& map);
IngestResult ingest_records(const std::string& path, const SchemaMap& map);

struct LabeledCase {
    DeathRecord record;
    std::string normalized_text;
    LabelVector gold;

    const std::string& id() const { return record.uid; }
};

// Keyed by case_id, or by "jurisdiction:case_id" when the file carries a
// jurisdiction column. Columns are named exactly as the schema classes.
std::map<std::string, LabelVector> read_gold_labels(const std::string& path, const LabelSchema& schema);
std::map<std::string, LabelVector> gold_from_table(const CsvTable& table, const LabelSchema& schema);

// Joins records with gold labels and normalizes text. With require_gold the
// absence of a label row is a validation error; otherwise unlabeled records
// get an all-zero vector.
std::vector<LabeledCase> attach_labels(const std::vector<DeathRecord>& records,
                                       const std::map<std::string, LabelVector>& gold, const LabelSchema& schema,
                                       const StopList& stop_list, bool require_gold = true);

LabelMatrix label_matrix(std::span<const LabeledCase> cases, std::size_t n_classes);

struct LintWarning {
    std::string case_id;
    std::string child;
    std::string parent;
};

struct LintReport {
    std::size_t n_cases = 0;
    std::vector<LintWarning> warnings;
    std::vector<std::string> classes;
    std::vector<std::size_t> positives;  // per class, schema order
    // Number of cases by count of positive non-composite classes.
    std::map<std::size_t, std::size_t> substance_cardinality;

    nlohmann::ordered_json to_json() const;
};

// Advisory only; never alters labels.
LintReport lint_labels(std::span<const LabeledCase> cases, const LabelSchema& schema);

}  // namespace odsurv::corpus
