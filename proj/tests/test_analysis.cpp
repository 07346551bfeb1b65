#include <doctest.h>

#include <cmath>
#include <regex>

#include "odsurv/analysis/explain.hpp"
#include "odsurv/common/error.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/corpus/split.hpp"
#include "odsurv/metrics/metrics.hpp"
#include "support/synthetic.hpp"

using namespace odsurv;
using namespace odsurv::analysis;

namespace {

const corpus::LabelSchema& schema() {
    static const auto s = corpus::default_schema();
    return s;
}

LabelMatrix random_labels(std::size_t n, std::size_t k, Engine& eng, double p) {
    LabelMatrix m(n, k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) m(i, c) = uniform_unit(eng) < p ? 1 : 0;
    return m;
}

struct Model {
    std::vector<corpus::LabeledCase> cases;
    finetune::EncoderClassifier classifier;
    Model() {
        const auto corpus = synth::make_corpus(400, 8);
        cases = synth::labeled(corpus);
        finetune::FineTuneConfig cfg;
        cfg.encoder_id = "scratch";
        cfg.learning_rate = 1e-2;
        cfg.batch_size = 8;
        cfg.epochs = 3;
        cfg.seed = 5;
        cfg.scratch.hidden_size = 32;
        cfg.scratch.num_attention_heads = 2;
        cfg.scratch.intermediate_size = 64;
        cfg.scratch.max_position_embeddings = 64;
        classifier = finetune::finetune_encoder(cases, {}, corpus.schema, cfg).model;
    }
};

const Model& model() {
    static const Model m;
    return m;
}

bool complete(const AttributionMap& m) {
    const double diff = m.logit - m.baseline_logit;
    return m.completeness_gap() <= 0.05 * std::abs(diff) + 1e-3;
}

}  // namespace

TEST_CASE("error table of a perfect prediction is empty") {
    Engine eng(1);
    const auto gold = random_labels(12, 10, eng, 0.3);
    std::vector<std::string> ids;
    for (int i = 0; i < 12; ++i) ids.push_back("c" + std::to_string(i));
    const auto t = build_error_table(gold, gold, ids, schema());
    REQUIRE(t.rows.size() == 10);
    for (const auto& r : t.rows) {
        CHECK(r.fp == 0);
        CHECK(r.fn == 0);
        CHECK(r.fp_examples.empty());
    }
    CHECK(t.total() == 0);
}

TEST_CASE("error table populates exactly the constructed cells") {
    LabelMatrix gold(5, 10), pred(5, 10);
    gold(0, 0) = pred(0, 0) = 1;
    gold(4, 9) = pred(4, 9) = 1;
    pred(2, 3) = 1;  // false positive, class 3
    gold(1, 7) = 1;  // false negative, class 7
    const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
    const auto t = build_error_table(pred, gold, ids, schema());
    for (std::size_t c = 0; c < 10; ++c) {
        INFO("class ", c);
        CHECK(t.rows[c].fp == (c == 3 ? 1u : 0u));
        CHECK(t.rows[c].fn == (c == 7 ? 1u : 0u));
    }
    CHECK(t.rows[3].fp_examples == std::vector<std::string>{"c"});
    CHECK(t.rows[7].fn_examples == std::vector<std::string>{"b"});
    CHECK(t.total_fp == 1);
    CHECK(t.total_fn == 1);
    CHECK(t.rows[3].class_name == "prescription_opioids");

    const auto csv = t.to_delimited(',');
    CHECK(csv.rfind("class,FP,FN,Total,Notes\n", 0) == 0);
    CHECK(csv.find("prescription_opioids,1,0,1,\n") != std::string::npos);
    CHECK(csv.find("Total,1,1,2,\n") != std::string::npos);
    const auto j = t.to_json();
    CHECK(j["rows"][7]["fn"] == 1);
    CHECK(j["total"] == 2);
}

TEST_CASE("error totals reconcile with mismatched label slots") {
    Engine eng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + uniform_below(eng, 40);
        const auto gold = random_labels(n, 10, eng, 0.3);
        const auto pred = random_labels(n, 10, eng, 0.3);
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(n - i));
        const auto t = build_error_table(pred, gold, ids, schema(), 3);
        std::size_t sum = 0;
        for (const auto& r : t.rows) {
            CHECK(r.total() == r.fp + r.fn);
            CHECK(r.fp_examples.size() == std::min<std::size_t>(r.fp, 3));
            CHECK(std::is_sorted(r.fp_examples.begin(), r.fp_examples.end()));
            CHECK(std::is_sorted(r.fn_examples.begin(), r.fn_examples.end()));
            sum += r.total();
        }
        CHECK(sum == t.total());
        const auto mismatched = metrics::hamming_loss(pred, gold) * static_cast<double>(n * 10);
        CHECK(static_cast<double>(sum) == doctest::Approx(mismatched));
    }
}

TEST_CASE("error table rejects mismatched shapes") {
    LabelMatrix a(3, 10), b(4, 10), c(3, 9);
    const std::vector<std::string> ids{"x", "y", "z"};
    CHECK_THROWS_AS(build_error_table(a, b, ids, schema()), ShapeError);
    CHECK_THROWS_AS(build_error_table(c, c, ids, schema()), ShapeError);
    CHECK_THROWS_AS(build_error_table(a, a, {"x"}, schema()), ShapeError);
}

TEST_CASE("integrated gradients satisfy completeness on sampled cases") {
    const auto& m = model();
    Engine eng(17);
    std::vector<std::size_t> idx(m.cases.size());
    std::iota(idx.begin(), idx.end(), 0);
    portable_shuffle(idx, eng);
    for (std::size_t s = 0; s < 20; ++s) {
        const auto& c = m.cases[idx[s]];
        const auto& cls = schema().classes[s % 10];
        const auto a = attribute_tokens(m.classifier, c.normalized_text, cls);
        INFO(c.normalized_text, " / ", cls);
        CHECK(a.tokens.size() == a.scores.size());
        CHECK(a.tokens.front() == "[CLS]");
        CHECK(complete(a));
        // Logit and probability agree with the plain forward pass.
        const auto probs = finetune::predict_probabilities(m.classifier, {c.normalized_text}, 1);
        CHECK(a.probability == doctest::Approx(probs(0, s % 10)).epsilon(1e-12));

        const auto fine = attribute_tokens(m.classifier, c.normalized_text, cls, 100);
        CHECK(std::abs(fine.score_sum() - a.score_sum()) <= 0.05 * std::abs(a.logit - a.baseline_logit) + 1e-3);
    }
}

TEST_CASE("completeness holds on random short texts") {
    const auto& m = model();
    const std::vector<std::string> words{"acute",  "fentanyl", "heroin",   "ethanol", "cocaine",  "toxicity",
                                         "mixed",  "drug",     "diazepam", "zzqx",    "pneumonia", "of",
                                         "methadone", "xylazine", ",", "intoxication"};
    Engine eng(23);
    for (int trial = 0; trial < 25; ++trial) {
        std::string text;
        const auto len = 1 + uniform_below(eng, 8);
        for (std::size_t w = 0; w < len; ++w) text += (w ? " " : "") + words[uniform_below(eng, words.size())];
        const auto& cls = schema().classes[uniform_below(eng, 10)];
        const auto a = attribute_tokens(m.classifier, text, cls, 64);
        INFO(text, " / ", cls);
        CHECK(complete(a));
        for (double v : a.scores) CHECK(std::isfinite(v));
    }
}

TEST_CASE("the drug keyword carries the largest positive attribution") {
    const auto& m = model();
    const auto a = attribute_tokens(m.classifier, "acute fentanyl toxicity", "fentanyl");
    REQUIRE(a.tokens.size() == 5);
    const auto best = std::max_element(a.scores.begin(), a.scores.end()) - a.scores.begin();
    CHECK(a.tokens[static_cast<std::size_t>(best)] == "fentanyl");
    CHECK(a.probability > 0.5);
}

TEST_CASE("attribution errors") {
    const auto& m = model();
    CHECK_THROWS_AS(attribute_tokens(m.classifier, "acute fentanyl toxicity", "kratom"), ConfigError);
    CHECK_THROWS_AS(attribute_tokens(m.classifier, "acute fentanyl toxicity", "fentanyl", 7), ConfigError);
    CHECK_NOTHROW(attribute_tokens(m.classifier, "acute fentanyl toxicity", "fentanyl", 8));
}

TEST_CASE("parallel attribution matches the sequential result") {
    const auto& m = model();
    const std::vector<std::string> texts{"heroin toxicity", "ethanol and cocaine intoxication", "gunshot wound"};
    const auto seq = attribute_many(m.classifier, texts, "any_drugs", 16, 1);
    const auto par = attribute_many(m.classifier, texts, "any_drugs", 16, 3);
    for (std::size_t i = 0; i < texts.size(); ++i) CHECK(seq[i].scores == par[i].scores);
}

TEST_CASE("empty report is a valid document") {
    const auto html = render_attribution_report({}, ReportFormat::Html);
    CHECK(html.rfind("<!DOCTYPE html>", 0) == 0);
    CHECK(html.find("</html>") != std::string::npos);
    CHECK(html.find("<span") == std::string::npos);
    CHECK(render_attribution_report({}, ReportFormat::Text).empty());
}

TEST_CASE("a single positive token is fully saturated green") {
    AttributionMap m;
    m.tokens = {"fentanyl"};
    m.scores = {1.0};
    m.target_class = "fentanyl";
    const auto html = render_attribution_report({m}, ReportFormat::Html);
    CHECK(html.find("class=\"tok pos\"") != std::string::npos);
    CHECK(html.find("rgba(0, 160, 0, 1.0000)") != std::string::npos);
    const auto text = render_attribution_report({m}, ReportFormat::Text);
    CHECK(text.find("fentanyl\t+1.000000") != std::string::npos);
}

TEST_CASE("mixed-sign maps partition colors by sign and order intensity by magnitude") {
    AttributionMap m;
    m.tokens = {"[CLS]", "alp", "##raz", "##olam", "<b>", "[SEP]"};
    m.scores = {0.05, 0.9, -0.3, 0.2, -0.6, 0.0};
    m.target_class = "benzodiazepines";
    const auto html = render_attribution_report({m}, ReportFormat::Html);
    const std::regex span(R"re(<span class="tok (pos|neg|zero)( cont)?" data-score="([^"]+)" data-intensity="([^"]+)" style="background-color: rgba\(([0-9]+), ([0-9]+), 0, ([0-9.]+)\)">([^<]*)</span>)re");
    std::vector<std::pair<double, double>> seen;  // (score, intensity)
    std::size_t n = 0;
    for (auto it = std::sregex_iterator(html.begin(), html.end(), span); it != std::sregex_iterator(); ++it, ++n) {
        const auto& mt = *it;
        const double score = std::stod(mt[3]);
        const double intensity = std::stod(mt[4]);
        CHECK(score == doctest::Approx(m.scores[n]).epsilon(1e-6));
        if (score < 0) {
            CHECK(mt[1] == "neg");
            CHECK(mt[5] == "220");
        } else {
            CHECK(mt[6] == "160");
        }
        CHECK(mt[2].matched == (m.tokens[n].rfind("##", 0) == 0));
        seen.emplace_back(std::abs(score), intensity);
    }
    REQUIRE(n == m.tokens.size());
    for (const auto& a : seen)
        for (const auto& b : seen)
            if (a.first < b.first) CHECK(a.second < b.second);
    CHECK(html.find("&lt;b&gt;") != std::string::npos);
    CHECK(seen[1].second == doctest::Approx(1.0));

    const auto text = render_attribution_report({m}, ReportFormat::Text);
    CHECK(text.find("##raz\t-0.300000") != std::string::npos);
}

TEST_CASE("report format names") {
    CHECK(report_format_from_string("html") == ReportFormat::Html);
    CHECK(report_format_from_string("text") == ReportFormat::Text);
    CHECK_THROWS_AS(report_format_from_string("pdf"), ConfigError);
}
