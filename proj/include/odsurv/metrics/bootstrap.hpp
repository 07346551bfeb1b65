#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "odsurv/common/matrix.hpp"

namespace odsurv::metrics {

struct ConfidenceInterval {
    double point = 0.0;
    double low = 0.0;
    double high = 0.0;
    double level = 0.95;
    std::size_t n_bootstrap = 1000;
    std::uint64_t seed = 0;
    std::size_t degenerate = 0;  // resamples where the metric was undefined

    friend bool operator==(const ConfidenceInterval&, const ConfidenceInterval&) = default;
};

struct BootstrapOptions {
    std::size_t n = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

// Metric evaluated on a multiset of case indices. nullopt marks an undefined
// value (e.g. AUROC on a single-class resample).
using CaseMetric = std::function<std::optional<double>(std::span<const std::size_t>)>;

// Case indices for resample `b`; each resample owns an independent RNG stream
// derived from (seed, b), so evaluation order does not matter.
std::vector<std::size_t> resample_indices(std::uint64_t seed, std::size_t b, std::size_t n_cases);

// Linear interpolation between order statistics (the numpy default).
double percentile_sorted(std::span<const double> sorted, double q);

ConfidenceInterval bootstrap_ci(const CaseMetric& metric, std::size_t n_cases, const BootstrapOptions& opts = {});

using MatrixMetric = std::function<std::optional<double>(const LabelMatrix& pred, const LabelMatrix& gold)>;

// Row-level resampling of a (pred, gold) pair.
ConfidenceInterval bootstrap_ci(const MatrixMetric& metric, const LabelMatrix& pred, const LabelMatrix& gold,
                                const BootstrapOptions& opts = {});

}  // namespace odsurv::metrics
