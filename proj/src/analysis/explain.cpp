#include "odsurv/analysis/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "odsurv/common/error.hpp"
#include "odsurv/common/parallel.hpp"

namespace odsurv::analysis {

using encoder::Mat;
using encoder::RowVec;

namespace {

void cap_sorted(std::vector<std::string>& ids, std::size_t cap) {
    std::sort(ids.begin(), ids.end());
    if (ids.size() > cap) ids.resize(cap);
}

std::string csv_field(const std::string& s, char delimiter) {
    if (s.find_first_of(std::string{delimiter, '"', '\n', '\r'}) == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string signed_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.*f", digits, v);
    return buf;
}

}  // namespace

nlohmann::ordered_json ErrorTable::to_json() const {
    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["class"] = r.class_name;
        row["fp"] = r.fp;
        row["fn"] = r.fn;
        row["total"] = r.total();
        row["fp_examples"] = r.fp_examples;
        row["fn_examples"] = r.fn_examples;
        row["notes"] = r.notes;
        j["rows"].push_back(std::move(row));
    }
    j["total_fp"] = total_fp;
    j["total_fn"] = total_fn;
    j["total"] = total();
    return j;
}

std::string ErrorTable::to_delimited(char delimiter) const {
    std::ostringstream out;
    const char d = delimiter;
    out << "class" << d << "FP" << d << "FN" << d << "Total" << d << "Notes\n";
    for (const auto& r : rows)
        out << csv_field(r.class_name, d) << d << r.fp << d << r.fn << d << r.total() << d << csv_field(r.notes, d)
            << '\n';
    out << "Total" << d << total_fp << d << total_fn << d << total() << d << '\n';
    return out.str();
}

ErrorTable build_error_table(const LabelMatrix& pred, const LabelMatrix& gold, const std::vector<std::string>& case_ids,
                             const corpus::LabelSchema& schema, std::size_t example_cap) {
    require_same_shape(pred, gold, "error table");
    if (pred.cols() != schema.size()) throw ShapeError("error table: label width differs from the schema");
    if (case_ids.size() != pred.rows()) throw ShapeError("error table: case id count differs from the row count");
    ErrorTable t;
    for (std::size_t c = 0; c < schema.size(); ++c) {
        ErrorRow row;
        row.class_name = schema.classes[c];
        for (std::size_t i = 0; i < pred.rows(); ++i) {
            if (pred(i, c) && !gold(i, c)) {
                ++row.fp;
                row.fp_examples.push_back(case_ids[i]);
            } else if (!pred(i, c) && gold(i, c)) {
                ++row.fn;
                row.fn_examples.push_back(case_ids[i]);
            }
        }
        cap_sorted(row.fp_examples, example_cap);
        cap_sorted(row.fn_examples, example_cap);
        t.total_fp += row.fp;
        t.total_fn += row.fn;
        t.rows.push_back(std::move(row));
    }
    return t;
}

double AttributionMap::score_sum() const {
    double s = 0;
    for (double v : scores) s += v;
    return s;
}

double AttributionMap::completeness_gap() const { return std::abs(score_sum() - (logit - baseline_logit)); }

nlohmann::ordered_json AttributionMap::to_json() const {
    nlohmann::ordered_json j;
    if (!case_id.empty()) j["case_id"] = case_id;
    j["target_class"] = target_class;
    j["probability"] = probability;
    j["logit"] = logit;
    j["baseline_logit"] = baseline_logit;
    j["baseline"] = baseline;
    j["steps"] = steps;
    j["tokens"] = tokens;
    j["scores"] = scores;
    return j;
}

AttributionMap attribute_tokens(const finetune::EncoderClassifier& model, const std::string& text,
                                const std::string& target_class, int steps) {
    if (steps < kMinSteps)
        throw ConfigError("integrated gradients needs at least " + std::to_string(kMinSteps) + " steps");
    const auto& classes = model.bundle.classes;
    const auto it = std::find(classes.begin(), classes.end(), target_class);
    if (it == classes.end()) throw ConfigError("unknown target class '" + target_class + "'");
    const auto target = static_cast<Eigen::Index>(it - classes.begin());

    const auto& bert = model.bundle.model;
    const auto& tok = model.bundle.tokenizer;
    const auto enc = tok.encode(text, model.effective_max_length());
    const Mat input = bert.lookup(enc.ids);
    const RowVec pad_row = bert.weights().word_embeddings.row(tok.pad_id());
    const Mat base = pad_row.replicate(input.rows(), 1);
    const Mat delta = input - base;

    RowVec dlogits = RowVec::Zero(bert.config().num_labels);
    dlogits(target) = 1.0;
    Mat grad_sum = Mat::Zero(input.rows(), input.cols());
    for (int k = 0; k < steps; ++k) {
        const double alpha = (k + 0.5) / steps;
        const Mat rows = base + alpha * delta;
        encoder::ForwardPass pass;
        bert.forward(enc.ids, pass, &rows);
        grad_sum += bert.backward(pass, dlogits, nullptr, nullptr);
    }

    AttributionMap out;
    out.tokens = enc.tokens;
    out.target_class = target_class;
    out.steps = steps;
    const Mat contrib = delta.cwiseProduct(grad_sum) / static_cast<double>(steps);
    out.scores.resize(static_cast<std::size_t>(contrib.rows()));
    for (Eigen::Index t = 0; t < contrib.rows(); ++t) out.scores[static_cast<std::size_t>(t)] = contrib.row(t).sum();

    encoder::ForwardPass at_input, at_base;
    bert.forward(enc.ids, at_input, &input);
    bert.forward(enc.ids, at_base, &base);
    out.logit = at_input.logits(target);
    out.baseline_logit = at_base.logits(target);
    out.probability = 1.0 / (1.0 + std::exp(-out.logit));
    for (double s : out.scores)
        if (!std::isfinite(s)) throw TrainingError("non-finite attribution for text '" + text + "'");
    return out;
}

std::vector<AttributionMap> attribute_many(const finetune::EncoderClassifier& model,
                                           const std::vector<std::string>& texts, const std::string& target_class,
                                           int steps, std::size_t workers) {
    std::vector<AttributionMap> out(texts.size());
    parallel_for(
        texts.size(), [&](std::size_t i) { out[i] = attribute_tokens(model, texts[i], target_class, steps); }, workers);
    return out;
}

ReportFormat report_format_from_string(const std::string& s) {
    if (s == "html") return ReportFormat::Html;
    if (s == "text") return ReportFormat::Text;
    throw ConfigError("unknown report format '" + s + "' (html or text)");
}

namespace {

double max_abs(const AttributionMap& m) {
    double mx = 0;
    for (double v : m.scores) mx = std::max(mx, std::abs(v));
    return mx;
}

std::string render_html(const std::vector<AttributionMap>& maps) {
    std::ostringstream out;
    out << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Token attributions</title>\n"
        << "<style>\n.tok { padding: 1px 2px; margin: 0 1px; border-radius: 2px; }\n"
        << ".cont { font-style: italic; }\n</style>\n</head>\n<body>\n";
    for (const auto& m : maps) {
        const double scale = max_abs(m);
        out << "<div class=\"attribution\" data-class=\"" << html_escape(m.target_class) << "\" data-probability=\""
            << fixed(m.probability, 4) << "\">\n";
        out << "<p>";
        if (!m.case_id.empty()) out << html_escape(m.case_id) << " | ";
        out << html_escape(m.target_class) << " | p = " << fixed(m.probability, 4) << "</p>\n<p>";
        for (std::size_t t = 0; t < m.tokens.size(); ++t) {
            const double s = m.scores[t];
            const double a = scale > 0 ? std::abs(s) / scale : 0.0;
            const char* sign = s > 0 ? "pos" : (s < 0 ? "neg" : "zero");
            const char* rgb = s < 0 ? "220, 0, 0" : "0, 160, 0";
            const bool cont = m.tokens[t].rfind("##", 0) == 0;
            out << "<span class=\"tok " << sign << (cont ? " cont" : "") << "\" data-score=\"" << signed_fixed(s, 6)
                << "\" data-intensity=\"" << fixed(a, 4) << "\" style=\"background-color: rgba(" << rgb << ", "
                << fixed(a, 4) << ")\">" << html_escape(m.tokens[t]) << "</span>";
            if (t + 1 < m.tokens.size()) out << ' ';
        }
        out << "</p>\n</div>\n";
    }
    out << "</body>\n</html>\n";
    return out.str();
}

std::string render_text(const std::vector<AttributionMap>& maps) {
    std::ostringstream out;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const auto& m = maps[i];
        if (i) out << '\n';
        out << "# ";
        if (!m.case_id.empty()) out << m.case_id << ' ';
        out << m.target_class << " p=" << fixed(m.probability, 4) << " logit=" << fixed(m.logit, 4)
            << " baseline=" << fixed(m.baseline_logit, 4) << '\n';
        for (std::size_t t = 0; t < m.tokens.size(); ++t) out << m.tokens[t] << '\t' << signed_fixed(m.scores[t], 6) << '\n';
    }
    return out.str();
}

}  // namespace

std::string render_attribution_report(const std::vector<AttributionMap>& maps, ReportFormat format) {
    for (const auto& m : maps)
        if (m.tokens.size() != m.scores.size()) throw ShapeError("attribution tokens and scores differ in length");
    return format == ReportFormat::Html ? render_html(maps) : render_text(maps);
}

}  // namespace odsurv::analysis
