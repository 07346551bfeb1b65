#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "odsurv/classic/models.hpp"

namespace odsurv::classic {

inline constexpr const char* kDefaultGridVersion = "odsurv-grid-1";

// Candidate values per hyperparameter. Combinations are enumerated in key
// insertion order with the last key varying fastest.
struct HyperGrid {
    Architecture architecture = Architecture::LogisticRegression;
    Json grid = Json::object();

    std::size_t size() const;
    std::vector<Json> combinations() const;
    void validate() const;
    Json to_json() const;
    static HyperGrid from_json(const Json& j);
};

// Default single-label grids for all four architectures, in architecture order.
std::vector<HyperGrid> default_grids();
HyperGrid default_grid(Architecture a);
// Default grids for the natively multi-label learners.
HyperGrid default_multilabel_grid(Architecture a);

struct CvResult {
    Json combination;
    std::vector<double> fold_scores;
    double mean_score = 0.0;
};

struct GridSearchResult {
    Architecture architecture = Architecture::LogisticRegression;
    std::size_t best = 0;
    std::vector<CvResult> results;  // grid order
    std::string fold_fingerprint;

    const CvResult& best_result() const { return results.at(best); }
    Json to_json() const;
};

struct SearchOptions {
    std::size_t folds = 10;
    bool balance_classes = true;
    std::size_t workers = 1;
};

// Stratified fold index per sample: positives and negatives are shuffled
// separately and dealt round-robin. Needs folds x 2 of each class.
std::vector<int> stratified_folds(std::span<const std::uint8_t> y, std::size_t folds, std::uint64_t seed);
std::string fold_fingerprint(std::span<const int> folds);

// Highest mean fold AUROC, first in grid order on ties.
std::size_t select_best(std::span<const CvResult> results);

GridSearchResult grid_search_cv(const FeatureMatrix& X, std::span<const std::uint8_t> y, const HyperGrid& grid,
                                std::uint64_t seed, const SearchOptions& opts = {});

}  // namespace odsurv::classic
