#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "odsurv/common/error.hpp"
#include "odsurv/corpus/dataset.hpp"
#include "odsurv/corpus/split.hpp"

using namespace odsurv;
using namespace odsurv::corpus;

namespace {

CsvTable table_from(const std::string& text) {
    std::istringstream in(text);
    return read_csv(in);
}

std::vector<LabeledCase> make_cases(std::size_t n, std::size_t positives_in_class, std::size_t cls, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledCase> out(n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].record.case_id = out[i].record.uid = "C" + std::to_string(i);
        out[i].gold.assign(10, 0);
        out[i].gold[(i * 7) % 10] = (rng() % 4 == 0);
    }
    for (auto& c : out) c.gold[cls] = 0;
    for (std::size_t k = 0; k < positives_in_class; ++k) out[idx[k]].gold[cls] = 1;
    return out;
}

}  // namespace

TEST_CASE("normalize_text lowercases and drops stop words") {
    CHECK(normalize_text("Acute Fentanyl AND Cocaine Toxicity") == "acute fentanyl cocaine toxicity");
    CHECK(normalize_text("") == "");
    CHECK(normalize_text("   ") == "");
    CHECK(normalize_text("Toxic effects of (Ethanol) and the Heroin,") == "toxic effects (ethanol) heroin,");
}

TEST_CASE("protected drug terms survive a custom stop list") {
    StopList custom = {"fentanyl", "toxicity"};
    CHECK(normalize_text("Fentanyl Toxicity", custom) == "fentanyl");
}

TEST_CASE("normalize_text is idempotent on random corpus text") {
    std::mt19937_64 rng(3);
    const std::vector<std::string> words = {"Acute", "and",  "THE",  "fentanyl,", "Cocaine", "of",  "(heroin)",
                                            "with",  "Mixed", "drug", "TOXICITY",  "in",      "a",   "ethanol;",
                                            "it's",  "--",    "Not",  "hypertensive", "due",  "to",  "use"};
    for (int t = 0; t < 100; ++t) {
        std::string s;
        const auto len = rng() % 14;
        for (std::size_t i = 0; i < len; ++i) s += words[rng() % words.size()] + std::string(rng() % 3 + 1, ' ');
        const auto once = normalize_text(s);
        CHECK(normalize_text(once) == once);
        for (char c : once) CHECK_FALSE((c >= 'A' && c <= 'Z'));
    }
}

TEST_CASE("ingest excludes blank cause text and conserves rows") {
    auto t = table_from(
        "case_id,county,primary,secondary\n"
        "1,Cook,acute fentanyl toxicity,\n"
        "2,Cook,   ,\n"
        "3,Cook,,hypertension\n"
        "4,\"LA\",\"multiple, drug\"\"s\"\"\",\n");
    SchemaMap m;
    m.columns = {{"case_id", "case_id"}, {"jurisdiction", "county"}, {"primary_cause", "primary"},
                 {"secondary_cause", "secondary"}};
    auto res = ingest_table(t, m);
    CHECK(res.input_rows == 4);
    REQUIRE(res.records.size() == 3);
    REQUIRE(res.excluded.size() == 1);
    CHECK(res.excluded[0].case_id == "2");
    CHECK(res.excluded[0].reason == "missing_text");
    CHECK(res.records[0].primary_cause == "acute fentanyl toxicity");
    CHECK(res.records[1].combined_text() == "hypertension");
    CHECK(res.records[2].primary_cause == "multiple, drug\"s\"");
}

TEST_CASE("ingest at paper scale: 35,698 rows with 265 blank") {
    std::ostringstream csv;
    csv << "case_id,primary_cause\n";
    for (int i = 0; i < 35698; ++i) csv << "K" << i << "," << (i % 134 == 0 && i / 134 < 265 ? "  " : "toxicity") << "\n";
    auto res = ingest_table(table_from(csv.str()), SchemaMap::identity());
    CHECK(res.records.size() == 35433);
    CHECK(res.excluded.size() == 265);
    CHECK(res.records.size() + res.excluded.size() == res.input_rows);
}

TEST_CASE("duplicate case ids") {
    SchemaMap m;
    m.columns = {{"case_id", "id"}, {"jurisdiction", "j"}, {"primary_cause", "p"}};
    CHECK_THROWS_AS(ingest_table(table_from("id,j,p\n7,A,x\n7,A,y\n"), m), ValidationError);
    auto res = ingest_table(table_from("id,j,p\n7,A,x\n7,B,y\n8,A,z\n"), m);
    CHECK(res.records[0].uid == "A:7");
    CHECK(res.records[1].uid == "B:7");
    CHECK(res.records[2].uid == "8");
    try {
        ingest_table(table_from("id,j,p\n7,A,x\n7,A,y\n"), m);
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("'7'") != std::string::npos);
    }
}

TEST_CASE("unreadable source is an ingest error") {
    CHECK_THROWS_AS(ingest_records("/nonexistent/file.csv", SchemaMap::identity()), IngestError);
}

TEST_CASE("dates parse as ISO first then month/day/year") {
    using namespace std::chrono;
    CHECK(*parse_date("2020-03-07") == year_month_day{year{2020}, month{3}, day{7}});
    CHECK(*parse_date("2020-03-07T10:22:00") == year_month_day{year{2020}, month{3}, day{7}});
    CHECK(*parse_date("3/7/2020") == year_month_day{year{2020}, month{3}, day{7}});
    CHECK(*parse_date("12/31/20") == year_month_day{year{2020}, month{12}, day{31}});
    CHECK_FALSE(parse_date("2020-02-30"));
    CHECK_FALSE(parse_date("yesterday"));
    CHECK_FALSE(parse_date(""));
}

TEST_CASE("rare grouping") {
    const auto schema = default_schema();
    std::map<std::string, std::size_t> counts = {
        {"barbiturates", 120}, {"fentanyl", 4758}, {"cocaine", 1000}, {"hallucinogens", 999}};
    auto g = apply_rare_grouping(counts, schema);
    CHECK(g["barbiturates"] == "others");
    CHECK(g["hallucinogens"] == "others");
    CHECK(g["fentanyl"] == "fentanyl");
    CHECK(g["cocaine"] == "cocaine");  // exactly at the cutoff keeps its class
    CHECK(apply_rare_grouping({{"Prescription Opioids", 1197}}, schema)["Prescription Opioids"] ==
          "prescription_opioids");
    try {
        apply_rare_grouping({{"kratom", 5000}}, schema);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("kratom") != std::string::npos);
    }
}

TEST_CASE("rare grouping never sends a common substance to others") {
    std::mt19937_64 rng(9);
    const auto schema = default_schema();
    for (int t = 0; t < 50; ++t) {
        std::map<std::string, std::size_t> counts;
        for (const auto& c : schema.classes)
            if (c != "others") counts[c] = rng() % 3000;
        for (const auto& [name, cls] : apply_rare_grouping(counts, schema))
            if (counts[name] >= schema.rare_cutoff) CHECK(cls != "others");
    }
}

TEST_CASE("default schema") {
    const auto s = default_schema();
    CHECK(s.size() == 10);
    CHECK(s.classes.front() == "any_opioids");
    CHECK(s.classes.back() == "any_drugs");
    CHECK(s.rare_cutoff == 1000);
    CHECK_NOTHROW(s.validate());
    auto cyclic = s;
    cyclic.implication_edges.emplace_back("any_opioids", "heroin");
    CHECK_THROWS_AS(cyclic.validate(), ConfigError);
    CHECK(schema_from_json(to_json(s)).hash() == s.hash());
}

TEST_CASE("lint flags implication violations and counts positives") {
    const auto schema = default_schema();
    std::vector<LabeledCase> cases(3);
    for (std::size_t i = 0; i < 3; ++i) {
        cases[i].record.uid = "c" + std::to_string(i);
        cases[i].gold.assign(10, 0);
    }
    auto zero = lint_labels(cases, schema);
    CHECK(zero.warnings.empty());
    for (auto p : zero.positives) CHECK(p == 0);

    cases[1].gold[schema.require_index("fentanyl")] = 1;
    cases[1].gold[schema.require_index("any_drugs")] = 1;
    auto rep = lint_labels(cases, schema);
    REQUIRE(rep.warnings.size() == 1);
    CHECK(rep.warnings[0].child == "fentanyl");
    CHECK(rep.warnings[0].parent == "any_opioids");
    CHECK(rep.positives[schema.require_index("fentanyl")] == 1);
    CHECK(rep.substance_cardinality[0] == 2);
    CHECK(rep.substance_cardinality[1] == 1);
    CHECK(cases[1].gold[0] == 0);  // never mutated
}

TEST_CASE("gold labels join on case id") {
    const auto schema = default_schema();
    std::string header = "case_id";
    for (const auto& c : schema.classes) header += "," + c;
    auto gold = gold_from_table(table_from(header + "\n1,1,0,1,0,0,0,0,0,0,1\n"), schema);
    REQUIRE(gold.count("1") == 1);
    CHECK(gold["1"][2] == 1);
    CHECK_THROWS_AS(gold_from_table(table_from(header + "\n1,1,0,x,0,0,0,0,0,0,1\n"), schema), ParseError);

    DeathRecord r;
    r.case_id = r.uid = "1";
    r.primary_cause = "Acute Fentanyl Toxicity";
    auto cases = attach_labels({r}, gold, schema, default_stop_list());
    CHECK(cases[0].normalized_text == "acute fentanyl toxicity");
    DeathRecord r2 = r;
    r2.case_id = r2.uid = "2";
    CHECK_THROWS_AS(attach_labels({r2}, gold, schema, default_stop_list()), ValidationError);
}

TEST_CASE("random 60/20/20 sizes at paper scale") {
    std::vector<LabeledCase> cases(35433);
    for (std::size_t i = 0; i < cases.size(); ++i) {
        cases[i].record.uid = std::to_string(i);
        cases[i].gold.assign(10, 0);
    }
    auto s = make_splits(cases, SplitStrategy::Random60_20_20, 42, std::nullopt, default_schema());
    CHECK(std::abs(static_cast<long>(s.train.size()) - 21260) <= 1);
    CHECK(std::abs(static_cast<long>(s.validation.size()) - 7087) <= 1);
    CHECK(std::abs(static_cast<long>(s.test.size()) - 7086) <= 1);
    CHECK_THROWS_AS(make_splits(cases, SplitStrategy::Random60_20_20, 42, std::string("fentanyl"), default_schema()),
                    ConfigError);
}

TEST_CASE("stratified 80/20 preserves prevalence") {
    const auto schema = default_schema();
    const auto f = schema.require_index("fentanyl");
    auto cases = make_cases(100, 10, f, 1);
    auto s = make_splits(cases, SplitStrategy::Stratified80_20, 7, std::string("fentanyl"), schema);
    auto test = select_cases(cases, s.test);
    std::size_t pos = 0;
    for (const auto& c : test) pos += c.gold[f];
    CHECK(pos == 2);
    CHECK(s.test.size() == 20);
    CHECK(s.validation.empty());
    CHECK_THROWS_AS(make_splits(cases, SplitStrategy::Stratified80_20, 7, std::nullopt, schema), ConfigError);
    auto one = make_cases(50, 1, f, 2);
    CHECK_THROWS_AS(make_splits(one, SplitStrategy::Stratified80_20, 7, std::string("fentanyl"), schema), SplitError);
}

TEST_CASE("splits are deterministic, disjoint and exhaustive") {
    const auto schema = default_schema();
    std::mt19937_64 rng(5);
    for (int t = 0; t < 40; ++t) {
        const std::size_t n = 5 + rng() % 300;
        auto cases = make_cases(n, 2 + rng() % (n / 3 + 1), 2, rng());
        const auto seed = rng();
        for (auto strat : {SplitStrategy::Random60_20_20, SplitStrategy::Stratified80_20}) {
            std::optional<std::string> target;
            if (strat == SplitStrategy::Stratified80_20) target = "fentanyl";
            auto a = make_splits(cases, strat, seed, target, schema);
            auto b = make_splits(cases, strat, seed, target, schema);
            CHECK(a.to_json() == b.to_json());
            std::set<std::string> seen;
            for (const auto* part : {&a.train, &a.validation, &a.test})
                for (const auto& id : *part) CHECK(seen.insert(id).second);
            CHECK(seen.size() == n);
            CHECK(DatasetSplit::from_json(nlohmann::json::parse(a.to_json().dump())).test == a.test);
        }
    }
}
