#include "odsurv/corpus/dataset.hpp"

#include <charconv>
#include <set>
#include <unordered_map>

#include "odsurv/common/error.hpp"

namespace odsurv::corpus {

namespace {

const std::vector<std::string>& record_fields() {
    static const std::vector<std::string> f = {"case_id", "jurisdiction",    "age",           "gender",         "race",
                                               "date_of_death", "manner_of_death", "primary_cause", "secondary_cause"};
    return f;
}

std::optional<int> parse_age(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0 || v > 150) return std::nullopt;
    return static_cast<int>(v);
}

}  // namespace

SchemaMap SchemaMap::identity() {
    SchemaMap m;
    for (const auto& f : record_fields()) m.columns[f] = f;
    return m;
}

SchemaMap SchemaMap::from_json(const nlohmann::json& j) {
    SchemaMap m;
    const auto& cols = j.contains("columns") ? j.at("columns") : j;
    for (const auto& [field, col] : cols.items()) {
        if (field == "delimiter") continue;
        if (std::find(record_fields().begin(), record_fields().end(), field) == record_fields().end())
            throw ConfigError("schema_map names unknown record field '" + field + "'");
        m.columns[field] = col.get<std::string>();
    }
    if (j.contains("delimiter")) {
        const auto d = j.at("delimiter").get<std::string>();
        m.delimiter = d == "\\t" || d == "tab" ? '\t' : d.at(0);
    }
    return m;
}

nlohmann::ordered_json SchemaMap::to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json cols = nlohmann::ordered_json::object();
    for (const auto& f : record_fields())
        if (auto it = columns.find(f); it != columns.end()) cols[f] = it->second;
    j["columns"] = cols;
    if (delimiter) j["delimiter"] = *delimiter == '\t' ? std::string("tab") : std::string(1, *delimiter);
    return j;
}

nlohmann::ordered_json IngestResult::report_json() const {
    nlohmann::ordered_json j;
    j["input_rows"] = input_rows;
    j["retained"] = records.size();
    j["excluded"] = excluded.size();
    auto ex = nlohmann::ordered_json::array();
    for (const auto& e : excluded) ex.push_back({{"row", e.row}, {"case_id", e.case_id}, {"reason", e.reason}});
    j["exclusions"] = ex;
    j["warnings"] = warnings;
    return j;
}

IngestResult ingest_table(const CsvTable& table, const SchemaMap& map) {
    for (const char* req : {"case_id", "primary_cause"})
        if (!map.columns.contains(req)) throw ConfigError(std::string("schema_map must map '") + req + "'");

    std::map<std::string, std::size_t> col;
    for (const auto& [field, name] : map.columns) {
        auto c = table.column(name);
        if (!c) {
            if (field == "case_id" || field == "primary_cause")
                throw IngestError("source has no column '" + name + "' for required field " + field);
            continue;
        }
        col[field] = *c;
    }
    auto get = [&](const std::vector<std::string>& row, const char* field) -> std::string {
        auto it = col.find(field);
        return it == col.end() ? std::string{} : row[it->second];
    };

    IngestResult res;
    res.input_rows = table.rows.size();
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        DeathRecord r;
        r.case_id = std::string(trim(get(row, "case_id")));
        r.jurisdiction = std::string(trim(get(row, "jurisdiction")));
        r.gender = get(row, "gender");
        r.race = get(row, "race");
        r.manner_of_death = get(row, "manner_of_death");
        r.primary_cause = get(row, "primary_cause");
        r.secondary_cause = get(row, "secondary_cause");
        const auto age_text = get(row, "age");
        r.age = parse_age(age_text);
        if (!r.age && !trim(age_text).empty())
            res.warnings.push_back("row " + std::to_string(i + 1) + ": unparseable age '" + age_text + "'");
        const auto date_text = get(row, "date_of_death");
        r.date_of_death = parse_date(date_text);
        if (!r.date_of_death && !trim(date_text).empty())
            res.warnings.push_back("row " + std::to_string(i + 1) + ": unparseable date '" + date_text + "'");

        if (r.case_id.empty()) throw ValidationError("row " + std::to_string(i + 1) + " has an empty case_id");
        if (r.combined_text().empty()) {
            res.excluded.push_back({i + 1, r.case_id, "missing_text"});
            continue;
        }
        res.records.push_back(std::move(r));
    }

    // Same case_id in one jurisdiction is an error; across jurisdictions the
    // composite key disambiguates.
    std::unordered_map<std::string, std::set<std::string>> juris_by_id;
    for (const auto& r : res.records) {
        auto& js = juris_by_id[r.case_id];
        if (!js.insert(r.jurisdiction).second) throw ValidationError("duplicate case_id '" + r.case_id + "'");
    }
    for (auto& r : res.records)
        r.uid = juris_by_id[r.case_id].size() > 1 ? r.jurisdiction + ":" + r.case_id : r.case_id;
    return res;
}

IngestResult ingest_records(const std::string& path, const SchemaMap& map) {
    return ingest_table(read_csv_file(path, map.delimiter), map);
}

std::map<std::string, LabelVector> gold_from_table(const CsvTable& table, const LabelSchema& schema) {
    auto id_col = table.column("case_id");
    if (!id_col) throw ParseError("gold label file has no case_id column");
    auto jur_col = table.column("jurisdiction");
    std::vector<std::size_t> cls_col;
    for (const auto& c : schema.classes) {
        auto idx = table.column(c);
        if (!idx) throw ParseError("gold label file has no column for class '" + c + "'");
        cls_col.push_back(*idx);
    }
    std::map<std::string, LabelVector> out;
    std::set<std::string> ambiguous;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        std::string id(trim(row[*id_col]));
        const std::string plain = id;
        LabelVector v(schema.size());
        for (std::size_t c = 0; c < cls_col.size(); ++c) {
            const auto cell = trim(row[cls_col[c]]);
            if (cell == "1" || cell == "1.0") v[c] = 1;
            else if (cell == "0" || cell == "0.0") v[c] = 0;
            else
                throw ParseError("gold label for case '" + id + "', class '" + schema.classes[c] + "' is '" +
                                 std::string(cell) + "', expected 0 or 1");
        }
        if (!jur_col) {
            if (!out.emplace(plain, v).second) throw ValidationError("duplicate case_id '" + id + "' in gold labels");
            continue;
        }
        const std::string composite = std::string(trim(row[*jur_col])) + ":" + plain;
        if (!out.emplace(composite, v).second)
            throw ValidationError("duplicate case_id '" + composite + "' in gold labels");
        if (!out.emplace(plain, v).second) ambiguous.insert(plain);
    }
    for (const auto& a : ambiguous) out.erase(a);
    return out;
}

std::map<std::string, LabelVector> read_gold_labels(const std::string& path, const LabelSchema& schema) {
    return gold_from_table(read_csv_file(path), schema);
}

std::vector<LabeledCase> attach_labels(const std::vector<DeathRecord>& records,
                                       const std::map<std::string, LabelVector>& gold, const LabelSchema& schema,
                                       const StopList& stop_list, bool require_gold) {
    std::vector<LabeledCase> out;
    out.reserve(records.size());
    std::vector<std::string> missing;
    for (const auto& r : records) {
        LabeledCase lc;
        lc.record = r;
        lc.normalized_text = normalize_text(r.combined_text(), stop_list);
        auto it = gold.find(r.uid);
        if (it == gold.end()) {
            if (require_gold) missing.push_back(r.uid);
            lc.gold.assign(schema.size(), 0);
        } else {
            lc.gold = it->second;
        }
        out.push_back(std::move(lc));
    }
    if (!missing.empty()) {
        std::string msg = std::to_string(missing.size()) + " records have no gold labels (first: " + missing.front() + ")";
        throw ValidationError(msg);
    }
    return out;
}

LabelMatrix label_matrix(std::span<const LabeledCase> cases, std::size_t n_classes) {
    LabelMatrix m(cases.size(), n_classes);
    for (std::size_t r = 0; r < cases.size(); ++r) {
        if (cases[r].gold.size() != n_classes) throw ShapeError("label vector width differs from schema");
        std::copy(cases[r].gold.begin(), cases[r].gold.end(), m.row(r).begin());
    }
    return m;
}

nlohmann::ordered_json LintReport::to_json() const {
    nlohmann::ordered_json j;
    j["n_cases"] = n_cases;
    nlohmann::ordered_json pos = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < classes.size(); ++c) pos[classes[c]] = positives[c];
    j["positives"] = pos;
    nlohmann::ordered_json card = nlohmann::ordered_json::object();
    for (const auto& [k, n] : substance_cardinality) card[std::to_string(k)] = n;
    j["substance_cardinality"] = card;
    auto w = nlohmann::ordered_json::array();
    for (const auto& x : warnings)
        w.push_back({{"case_id", x.case_id}, {"child", x.child}, {"parent", x.parent}});
    j["warnings"] = w;
    return j;
}

LintReport lint_labels(std::span<const LabeledCase> cases, const LabelSchema& schema) {
    LintReport rep;
    rep.n_cases = cases.size();
    rep.classes = schema.classes;
    rep.positives.assign(schema.size(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<bool> composite(schema.size(), false);
    for (const auto& [child, parent] : schema.implication_edges) {
        edges.emplace_back(schema.require_index(child), schema.require_index(parent));
        composite[schema.require_index(parent)] = true;
    }
    for (const auto& lc : cases) {
        std::size_t k = 0;
        for (std::size_t c = 0; c < schema.size(); ++c) {
            if (lc.gold[c]) {
                ++rep.positives[c];
                if (!composite[c]) ++k;
            }
        }
        ++rep.substance_cardinality[k];
        for (const auto& [child, parent] : edges)
            if (lc.gold[child] && !lc.gold[parent])
                rep.warnings.push_back({lc.id(), schema.classes[child], schema.classes[parent]});
    }
    return rep;
}

}  // namespace odsurv::corpus
