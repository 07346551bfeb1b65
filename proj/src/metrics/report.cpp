#include "odsurv/metrics/report.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>

#include "odsurv/common/error.hpp"

namespace odsurv::metrics {

namespace {

std::optional<double> ranking_macro(const ScoreMatrix& s, const LabelMatrix& g, bool ap) {
    const auto r = ranking_metrics(s, g);
    return ap ? r.macro_average_precision : r.macro_auroc;
}

nlohmann::ordered_json ci_json(const ConfidenceInterval& ci) {
    nlohmann::ordered_json j;
    j["point"] = ci.point;
    j["low"] = ci.low;
    j["high"] = ci.high;
    j["level"] = ci.level;
    j["n_bootstrap"] = ci.n_bootstrap;
    j["seed"] = ci.seed;
    j["degenerate_resamples"] = ci.degenerate;
    return j;
}

ConfidenceInterval ci_from_json(const nlohmann::json& j) {
    ConfidenceInterval ci;
    ci.point = j.at("point").get<double>();
    ci.low = j.at("low").get<double>();
    ci.high = j.at("high").get<double>();
    ci.level = j.at("level").get<double>();
    ci.n_bootstrap = j.at("n_bootstrap").get<std::size_t>();
    ci.seed = j.at("seed").get<std::uint64_t>();
    ci.degenerate = j.value("degenerate_resamples", std::size_t{0});
    return ci;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

const ConfidenceInterval& MetricReport::metric(const std::string& name) const {
    for (const auto& [n, ci] : metrics)
        if (n == name) return ci;
    throw ValidationError("metric '" + name + "' not in report");
}

bool MetricReport::has(const std::string& name) const {
    return std::any_of(metrics.begin(), metrics.end(), [&](const auto& m) { return m.first == name; });
}

const std::vector<std::string>& report_metric_names() {
    static const std::vector<std::string> names = {
        "macro_f1",    "macro_f1_binary", "accuracy",    "label_accuracy",
        "hamming_loss", "macro_auroc",    "micro_auroc", "macro_average_precision",
    };
    return names;
}

MetricReport evaluate(const LabelMatrix& pred, const LabelMatrix& gold, const ScoreMatrix* scores,
                      std::vector<std::string> classes, std::string model_tag, std::string dataset_tag,
                      const BootstrapOptions& opts) {
    require_same_shape(pred, gold, "evaluate");
    if (classes.size() != gold.cols()) throw ShapeError("evaluate: class names do not match label width");
    ScoreMatrix hard;
    if (!scores) {
        hard = ScoreMatrix(pred.rows(), pred.cols());
        for (std::size_t r = 0; r < pred.rows(); ++r)
            for (std::size_t c = 0; c < pred.cols(); ++c) hard(r, c) = pred(r, c);
    } else {
        require_same_shape(*scores, gold, "evaluate(scores)");
    }
    const ScoreMatrix& s = scores ? *scores : hard;

    MetricReport rep;
    rep.model_tag = std::move(model_tag);
    rep.dataset_tag = std::move(dataset_tag);
    rep.n_cases = gold.rows();
    rep.classes = std::move(classes);
    rep.scores_are_hard_labels = scores == nullptr;

    auto rows_metric = [&](auto fn) -> CaseMetric {
        return [&, fn](std::span<const std::size_t> rows) -> std::optional<double> {
            return fn(pred.select_rows(rows), gold.select_rows(rows), s.select_rows(rows));
        };
    };
    const std::vector<std::pair<std::string, CaseMetric>> defs = {
        {"macro_f1", rows_metric([](const LabelMatrix& p, const LabelMatrix& g, const ScoreMatrix&) -> std::optional<double> {
             return macro_f1(p, g, F1Mode::OverLabels);
         })},
        {"macro_f1_binary", rows_metric([](const LabelMatrix& p, const LabelMatrix& g, const ScoreMatrix&) -> std::optional<double> {
             return macro_f1(p, g, F1Mode::OverBinaryClasses);
         })},
        {"accuracy", rows_metric([](const LabelMatrix& p, const LabelMatrix& g, const ScoreMatrix&) -> std::optional<double> {
             return subset_accuracy(p, g);
         })},
        {"label_accuracy", rows_metric([](const LabelMatrix& p, const LabelMatrix& g, const ScoreMatrix&) -> std::optional<double> {
             return label_accuracy(p, g);
         })},
        {"hamming_loss", rows_metric([](const LabelMatrix& p, const LabelMatrix& g, const ScoreMatrix&) -> std::optional<double> {
             return hamming_loss(p, g);
         })},
        {"macro_auroc", rows_metric([](const LabelMatrix&, const LabelMatrix& g, const ScoreMatrix& sc) {
             return ranking_macro(sc, g, false);
         })},
        {"micro_auroc", rows_metric([](const LabelMatrix&, const LabelMatrix& g, const ScoreMatrix& sc) {
             return auroc(sc.data(), g.data());
         })},
        {"macro_average_precision", rows_metric([](const LabelMatrix&, const LabelMatrix& g, const ScoreMatrix& sc) {
             return ranking_macro(sc, g, true);
         })},
    };

    std::vector<std::size_t> all(gold.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (const auto& [name, fn] : defs) {
        if (fn(all)) {
            rep.metrics.emplace_back(name, bootstrap_ci(fn, gold.rows(), opts));
        } else {
            // Undefined on the full set (e.g. no class has both outcomes): NaN,
            // still present so every report carries every metric.
            ConfidenceInterval ci;
            ci.point = ci.low = ci.high = std::numeric_limits<double>::quiet_NaN();
            ci.level = opts.level;
            ci.n_bootstrap = opts.n;
            ci.seed = opts.seed;
            rep.metrics.emplace_back(name, ci);
        }
    }

    const auto ranking = ranking_metrics(s, gold);
    for (std::size_t c = 0; c < gold.cols(); ++c) {
        ClassBreakdown cb;
        cb.name = rep.classes[c];
        const auto pc = pred.column(c), gc = gold.column(c);
        cb.counts = confusion(pc, gc);
        cb.support = cb.counts.tp + cb.counts.fn;
        cb.f1 = f1_from_counts(cb.counts.tp, cb.counts.fp, cb.counts.fn);
        cb.f1_binary = 0.5 * (cb.f1 + f1_from_counts(cb.counts.tn, cb.counts.fn, cb.counts.fp));
        cb.auroc = ranking.per_class_auroc[c];
        cb.average_precision = ranking.per_class_average_precision[c];
        rep.per_class.push_back(cb);
    }
    for (auto c : ranking.skipped_classes) rep.skipped_classes.push_back(rep.classes[c]);
    return rep;
}

nlohmann::ordered_json to_json(const MetricReport& rep) {
    nlohmann::ordered_json j;
    j["model"] = rep.model_tag;
    j["dataset"] = rep.dataset_tag;
    j["split_fingerprint"] = rep.split_fingerprint;
    j["n_cases"] = rep.n_cases;
    j["classes"] = rep.classes;
    j["scores_are_hard_labels"] = rep.scores_are_hard_labels;
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [name, ci] : rep.metrics) m[name] = ci_json(ci);
    j["metrics"] = m;
    nlohmann::ordered_json pcs = nlohmann::ordered_json::array();
    for (const auto& cb : rep.per_class) {
        nlohmann::ordered_json c;
        c["class"] = cb.name;
        c["support"] = cb.support;
        c["tp"] = cb.counts.tp;
        c["fp"] = cb.counts.fp;
        c["fn"] = cb.counts.fn;
        c["tn"] = cb.counts.tn;
        c["f1"] = cb.f1;
        c["f1_binary"] = cb.f1_binary;
        c["auroc"] = optional_json(cb.auroc);
        c["average_precision"] = optional_json(cb.average_precision);
        pcs.push_back(c);
    }
    j["per_class"] = pcs;
    j["skipped_ranking_classes"] = rep.skipped_classes;
    j["footer"] = kZeroDivisionRule;
    return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport rep;
    rep.model_tag = j.at("model").get<std::string>();
    rep.dataset_tag = j.at("dataset").get<std::string>();
    rep.split_fingerprint = j.value("split_fingerprint", std::string{});
    rep.n_cases = j.at("n_cases").get<std::size_t>();
    rep.classes = j.at("classes").get<std::vector<std::string>>();
    rep.scores_are_hard_labels = j.value("scores_are_hard_labels", false);
    // nlohmann::json sorts keys; restore the canonical order.
    const auto& m = j.at("metrics");
    for (const auto& name : report_metric_names())
        if (m.contains(name)) rep.metrics.emplace_back(name, ci_from_json(m.at(name)));
    for (const auto& c : j.at("per_class")) {
        ClassBreakdown cb;
        cb.name = c.at("class").get<std::string>();
        cb.support = c.at("support").get<std::size_t>();
        cb.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("fn").get<std::size_t>(),
                     c.at("tn").get<std::size_t>()};
        cb.f1 = c.at("f1").get<double>();
        cb.f1_binary = c.at("f1_binary").get<double>();
        cb.auroc = optional_from(c.at("auroc"));
        cb.average_precision = optional_from(c.at("average_precision"));
        rep.per_class.push_back(cb);
    }
    rep.skipped_classes = j.value("skipped_ranking_classes", std::vector<std::string>{});
    return rep;
}

std::string render_table(std::span<const MetricReport> reports, char delimiter) {
    std::ostringstream out;
    out << "metric";
    for (const auto& r : reports) out << delimiter << r.model_tag << " [" << r.dataset_tag << "]";
    out << '\n';
    for (const auto& name : report_metric_names()) {
        out << name;
        for (const auto& r : reports) {
            out << delimiter;
            if (!r.has(name)) continue;
            const auto& ci = r.metric(name);
            out << fmt3(ci.point) << " (" << fmt3(ci.low) << "-" << fmt3(ci.high) << ")";
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace odsurv::metrics
