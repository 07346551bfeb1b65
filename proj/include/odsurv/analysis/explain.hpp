#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/common/matrix.hpp"
#include "odsurv/corpus/schema.hpp"
#include "odsurv/finetune/finetune.hpp"

namespace odsurv::analysis {

inline constexpr std::size_t kDefaultExampleCap = 10;
inline constexpr int kDefaultSteps = 50;
inline constexpr int kMinSteps = 8;

struct ErrorRow {
    std::string class_name;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::vector<std::string> fp_examples;  // sorted case ids, capped
    std::vector<std::string> fn_examples;
    std::string notes;

    std::size_t total() const noexcept { return fp + fn; }
};

struct ErrorTable {
    std::vector<ErrorRow> rows;  // schema order
    std::size_t total_fp = 0;
    std::size_t total_fn = 0;

    std::size_t total() const noexcept { return total_fp + total_fn; }
    nlohmann::ordered_json to_json() const;
    // Header "class,FP,FN,Total,Notes", one row per class, then a Total row.
    std::string to_delimited(char delimiter = ',') const;
};

ErrorTable build_error_table(const LabelMatrix& pred, const LabelMatrix& gold, const std::vector<std::string>& case_ids,
                             const corpus::LabelSchema& schema, std::size_t example_cap = kDefaultExampleCap);

struct AttributionMap {
    std::string case_id;
    std::vector<std::string> tokens;  // WordPiece tokens including [CLS]/[SEP]
    std::vector<double> scores;       // contribution to the target logit
    std::string target_class;
    double probability = 0.0;  // sigmoid of the target logit
    double logit = 0.0;
    double baseline_logit = 0.0;
    std::string baseline = "pad-embedding";
    int steps = kDefaultSteps;

    double score_sum() const;
    // |sum(scores) - (logit - baseline_logit)|
    double completeness_gap() const;
    nlohmann::ordered_json to_json() const;
};

// Integrated gradients of the target logit over the word-embedding input,
// from an equal-length sequence of [PAD] embeddings, midpoint rule.
AttributionMap attribute_tokens(const finetune::EncoderClassifier& model, const std::string& text,
                                const std::string& target_class, int steps = kDefaultSteps);

std::vector<AttributionMap> attribute_many(const finetune::EncoderClassifier& model,
                                           const std::vector<std::string>& texts, const std::string& target_class,
                                           int steps = kDefaultSteps, std::size_t workers = 1);

enum class ReportFormat { Html, Text };

ReportFormat report_format_from_string(const std::string& s);

std::string render_attribution_report(const std::vector<AttributionMap>& maps, ReportFormat format);

}  // namespace odsurv::analysis
