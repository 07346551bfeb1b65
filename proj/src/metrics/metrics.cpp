#include "odsurv/metrics/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace odsurv::metrics {

Confusion confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gold) {
    if (pred.size() != gold.size()) throw ShapeError("confusion: length mismatch");
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gold[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom == 0) return 1.0;
    return static_cast<double>(2 * tp) / static_cast<double>(denom);
}

std::vector<double> per_class_f1(const LabelMatrix& pred, const LabelMatrix& gold) {
    require_same_shape(pred, gold, "per_class_f1");
    std::vector<double> out(gold.cols());
    for (std::size_t c = 0; c < gold.cols(); ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t r = 0; r < gold.rows(); ++r) {
            const bool p = pred(r, c) != 0, g = gold(r, c) != 0;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        out[c] = f1_from_counts(tp, fp, fn);
    }
    return out;
}

double macro_f1(const LabelMatrix& pred, const LabelMatrix& gold, F1Mode mode) {
    require_same_shape(pred, gold, "macro_f1");
    if (gold.cols() == 0) return 1.0;
    double sum = 0.0;
    for (std::size_t c = 0; c < gold.cols(); ++c) {
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t r = 0; r < gold.rows(); ++r) {
            const bool p = pred(r, c) != 0, g = gold(r, c) != 0;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
            tn += !p && !g;
        }
        if (mode == F1Mode::OverLabels) {
            sum += f1_from_counts(tp, fp, fn);
        } else {
            // Negative class: roles of tp/tn and fp/fn swap.
            sum += 0.5 * (f1_from_counts(tp, fp, fn) + f1_from_counts(tn, fn, fp));
        }
    }
    return sum / static_cast<double>(gold.cols());
}

double hamming_loss(const LabelMatrix& pred, const LabelMatrix& gold) {
    require_same_shape(pred, gold, "hamming_loss");
    const std::size_t slots = gold.rows() * gold.cols();
    if (slots == 0) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < slots; ++i) wrong += (pred.data()[i] != 0) != (gold.data()[i] != 0);
    return static_cast<double>(wrong) / static_cast<double>(slots);
}

double label_accuracy(const LabelMatrix& pred, const LabelMatrix& gold) {
    require_same_shape(pred, gold, "label_accuracy");
    const std::size_t slots = gold.rows() * gold.cols();
    if (slots == 0) return 1.0;
    std::size_t right = 0;
    for (std::size_t i = 0; i < slots; ++i) right += (pred.data()[i] != 0) == (gold.data()[i] != 0);
    return static_cast<double>(right) / static_cast<double>(slots);
}

double subset_accuracy(const LabelMatrix& pred, const LabelMatrix& gold) {
    require_same_shape(pred, gold, "subset_accuracy");
    if (gold.rows() == 0) return 1.0;
    std::size_t exact = 0;
    for (std::size_t r = 0; r < gold.rows(); ++r) {
        auto p = pred.row(r), g = gold.row(r);
        bool same = true;
        for (std::size_t c = 0; c < g.size() && same; ++c) same = (p[c] != 0) == (g[c] != 0);
        exact += same;
    }
    return static_cast<double>(exact) / static_cast<double>(gold.rows());
}

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> gold) {
    if (scores.size() != gold.size()) throw ShapeError("auroc: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (gold[order[k]]) {
                pos_rank_sum += midrank;
                ++pos;
            }
        }
        i = j;
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    const double p = static_cast<double>(pos), q = static_cast<double>(neg);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> gold) {
    if (scores.size() != gold.size()) throw ShapeError("average_precision: length mismatch");
    const std::size_t n = scores.size();
    const std::size_t total_pos = static_cast<std::size_t>(std::count_if(gold.begin(), gold.end(), [](auto g) { return g != 0; }));
    if (total_pos == 0) return std::nullopt;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            tp += gold[order[j]] != 0;
            ++j;
        }
        seen = j;
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

RankingResult ranking_metrics(const ScoreMatrix& scores, const LabelMatrix& gold) {
    require_same_shape(scores, gold, "ranking_metrics");
    RankingResult out;
    double auc_sum = 0.0, ap_sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < gold.cols(); ++c) {
        const auto s = scores.column(c);
        const auto g = gold.column(c);
        auto a = auroc(s, g);
        auto p = a ? average_precision(s, g) : std::nullopt;
        out.per_class_auroc.push_back(a);
        out.per_class_average_precision.push_back(p);
        if (!a) {
            out.skipped_classes.push_back(c);
            continue;
        }
        auc_sum += *a;
        ap_sum += *p;
        ++used;
    }
    if (used > 0) {
        out.macro_auroc = auc_sum / static_cast<double>(used);
        out.macro_average_precision = ap_sum / static_cast<double>(used);
    }
    out.micro_auroc = auroc(scores.data(), gold.data());
    return out;
}

}  // namespace odsurv::metrics
