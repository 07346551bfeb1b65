#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/common/matrix.hpp"
#include "odsurv/metrics/bootstrap.hpp"
#include "odsurv/metrics/metrics.hpp"

namespace odsurv::metrics {

inline constexpr const char* kZeroDivisionRule =
    "F1 for a class with no predicted and no gold positives is 1; otherwise an empty precision or recall "
    "denominator counts as 0.";

struct ClassBreakdown {
    std::string name;
    std::size_t support = 0;
    Confusion counts;
    double f1 = 0.0;         // positive-class F1
    double f1_binary = 0.0;  // mean of positive- and negative-class F1
    std::optional<double> auroc;
    std::optional<double> average_precision;
};

struct MetricReport {
    std::string model_tag;
    std::string dataset_tag;  // "internal_test", "external_test", "validation", ...
    std::string split_fingerprint;
    std::size_t n_cases = 0;
    std::vector<std::string> classes;
    std::vector<std::pair<std::string, ConfidenceInterval>> metrics;  // stable order
    std::vector<ClassBreakdown> per_class;
    std::vector<std::string> skipped_classes;
    bool scores_are_hard_labels = false;

    const ConfidenceInterval& metric(const std::string& name) const;
    bool has(const std::string& name) const;
};

// Metric names emitted by evaluate(), in report order.
const std::vector<std::string>& report_metric_names();

// Scores default to the predicted labels when no continuous output exists.
MetricReport evaluate(const LabelMatrix& pred, const LabelMatrix& gold, const ScoreMatrix* scores,
                      std::vector<std::string> classes, std::string model_tag, std::string dataset_tag,
                      const BootstrapOptions& opts = {});

nlohmann::ordered_json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

// Metric x model grid, each cell "point (low-high)".
std::string render_table(std::span<const MetricReport> reports, char delimiter = '\t');

}  // namespace odsurv::metrics
