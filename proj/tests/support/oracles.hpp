#pragma once

// Definitional reference implementations used only by tests. They share no
// code with the library metrics.

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<int>>;

inline double f1_definitional(const Rows& pred, const Rows& gold, std::size_t c) {
    double tp = 0, pred_pos = 0, gold_pos = 0;
    for (std::size_t r = 0; r < gold.size(); ++r) {
        if (pred[r][c] == 1) pred_pos += 1;
        if (gold[r][c] == 1) gold_pos += 1;
        if (pred[r][c] == 1 && gold[r][c] == 1) tp += 1;
    }
    if (pred_pos == 0 && gold_pos == 0) return 1.0;
    const double precision = pred_pos == 0 ? 0.0 : tp / pred_pos;
    const double recall = gold_pos == 0 ? 0.0 : tp / gold_pos;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

inline double macro_f1(const Rows& pred, const Rows& gold) {
    const std::size_t L = gold.front().size();
    double s = 0;
    for (std::size_t c = 0; c < L; ++c) s += f1_definitional(pred, gold, c);
    return s / static_cast<double>(L);
}

inline double hamming(const Rows& pred, const Rows& gold) {
    double wrong = 0, total = 0;
    for (std::size_t r = 0; r < gold.size(); ++r)
        for (std::size_t c = 0; c < gold[r].size(); ++c) {
            total += 1;
            if (pred[r][c] != gold[r][c]) wrong += 1;
        }
    return wrong / total;
}

inline double subset_accuracy(const Rows& pred, const Rows& gold) {
    double ok = 0;
    for (std::size_t r = 0; r < gold.size(); ++r) ok += pred[r] == gold[r] ? 1 : 0;
    return ok / static_cast<double>(gold.size());
}

// Exhaustive positive/negative pair enumeration; ties count one half.
inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& g) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (g[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (g[j] != 0) continue;
            pairs += 1;
            if (s[i] > s[j]) wins += 1;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

// Recompute precision and recall from scratch at every distinct threshold.
inline double ap_stepwise(const std::vector<double>& s, const std::vector<int>& g) {
    std::set<double, std::greater<>> thresholds(s.begin(), s.end());
    double total_pos = 0;
    for (int v : g) total_pos += v;
    double ap = 0, prev_recall = 0;
    for (double t : thresholds) {
        double tp = 0, flagged = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= t) {
                flagged += 1;
                tp += g[i];
            }
        }
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / flagged);
        prev_recall = recall;
    }
    return ap;
}

// Percentile by sorting a copy and interpolating at q*(m-1).
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace oracle
