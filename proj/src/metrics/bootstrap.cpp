#include "odsurv/metrics/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "odsurv/common/error.hpp"
#include "odsurv/common/parallel.hpp"
#include "odsurv/common/rng.hpp"

namespace odsurv::metrics {

std::vector<std::size_t> resample_indices(std::uint64_t seed, std::size_t b, std::size_t n_cases) {
    Engine eng(stream_seed(seed, b));
    std::vector<std::size_t> idx(n_cases);
    for (auto& i : idx) i = static_cast<std::size_t>(uniform_below(eng, n_cases));
    return idx;
}

double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw ValidationError("percentile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

ConfidenceInterval bootstrap_ci(const CaseMetric& metric, std::size_t n_cases, const BootstrapOptions& opts) {
    if (opts.n < 1) throw ConfigError("bootstrap needs at least one resample");
    if (n_cases == 0) throw ValidationError("bootstrap on an empty dataset");
    if (!(opts.level > 0.0 && opts.level < 1.0)) throw ConfigError("bootstrap level must lie in (0, 1)");

    std::vector<std::size_t> all(n_cases);
    std::iota(all.begin(), all.end(), 0);
    const auto point = metric(all);
    if (!point) throw ValidationError("metric undefined on the full dataset");

    std::vector<std::optional<double>> values(opts.n);
    parallel_for(
        opts.n, [&](std::size_t b) { values[b] = metric(resample_indices(opts.seed, b, n_cases)); }, opts.workers);

    ConfidenceInterval ci;
    ci.point = *point;
    ci.level = opts.level;
    ci.n_bootstrap = opts.n;
    ci.seed = opts.seed;
    std::vector<double> ok;
    ok.reserve(opts.n);
    for (const auto& v : values) {
        if (v && std::isfinite(*v)) ok.push_back(*v);
        else ++ci.degenerate;
    }
    if (ok.empty()) {
        ci.low = ci.high = ci.point;
        return ci;
    }
    std::sort(ok.begin(), ok.end());
    const double alpha = 1.0 - opts.level;
    ci.low = percentile_sorted(ok, alpha / 2.0);
    ci.high = percentile_sorted(ok, 1.0 - alpha / 2.0);
    return ci;
}

ConfidenceInterval bootstrap_ci(const MatrixMetric& metric, const LabelMatrix& pred, const LabelMatrix& gold,
                                const BootstrapOptions& opts) {
    require_same_shape(pred, gold, "bootstrap_ci");
    return bootstrap_ci(
        [&](std::span<const std::size_t> rows) { return metric(pred.select_rows(rows), gold.select_rows(rows)); },
        gold.rows(), opts);
}

}  // namespace odsurv::metrics
