#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "odsurv/common/matrix.hpp"

namespace odsurv::metrics {

enum class F1Mode {
    OverLabels,         // mean of per-class positive F1 across schema columns
    OverBinaryClasses,  // per column: mean of positive-class F1 and negative-class F1
};

struct Confusion {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gold);

// F1 = 2tp / (2tp + fp + fn). A class with no predicted and no gold
// positives scores 1.
double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

std::vector<double> per_class_f1(const LabelMatrix& pred, const LabelMatrix& gold);
double macro_f1(const LabelMatrix& pred, const LabelMatrix& gold, F1Mode mode = F1Mode::OverLabels);

double hamming_loss(const LabelMatrix& pred, const LabelMatrix& gold);
double label_accuracy(const LabelMatrix& pred, const LabelMatrix& gold);
double subset_accuracy(const LabelMatrix& pred, const LabelMatrix& gold);

// Rank statistic with mid-ranks for ties. nullopt if gold is single-valued.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> gold);

// Step-wise area: sum over distinct thresholds (descending) of
// (recall_k - recall_{k-1}) * precision_k. nullopt if there are no positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> gold);

struct RankingResult {
    std::optional<double> macro_auroc;
    std::optional<double> macro_average_precision;
    std::optional<double> micro_auroc;  // all label slots pooled
    std::vector<std::optional<double>> per_class_auroc;
    std::vector<std::optional<double>> per_class_average_precision;
    std::vector<std::size_t> skipped_classes;  // single-valued gold
};

RankingResult ranking_metrics(const ScoreMatrix& scores, const LabelMatrix& gold);

}  // namespace odsurv::metrics
