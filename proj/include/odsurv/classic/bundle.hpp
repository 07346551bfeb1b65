#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "odsurv/classic/search.hpp"
#include "odsurv/common/matrix.hpp"

namespace odsurv::classic {

inline constexpr int kBundleFormatVersion = 1;

// Training data of one per-class binary task.
struct ClassTrainingSet {
    std::string class_name;
    FeatureMatrix X;
    std::vector<std::uint8_t> y;
};

struct ClassModel {
    Architecture architecture = Architecture::LogisticRegression;
    Json combination;
    double cv_score = 0.0;
    Json search;  // per-architecture grid search summaries
    std::shared_ptr<const BinaryModel> model;
};

struct BinaryClassifierBundle {
    std::vector<std::string> classes;  // schema order
    std::string embedding_backend;
    std::string schema_hash;
    std::uint64_t seed = 0;
    std::map<std::string, ClassModel> per_class;
    std::map<std::string, std::string> failures;  // class -> error message
};

struct BundleOptions {
    SearchOptions search;
    std::vector<std::string> skip_classes;
};

// Grid search over every architecture for each class, keeping the winner by
// mean CV AUROC (ties: architecture order, then grid order) and refitting it
// on the full training portion. A failing class is recorded, not fatal.
BinaryClassifierBundle train_per_drug_bundle(const std::vector<ClassTrainingSet>& sets, const std::vector<HyperGrid>& grids,
                                             std::uint64_t seed, const BundleOptions& opts = {});

struct BundlePrediction {
    LabelMatrix labels;
    ScoreMatrix scores;
};

// Per-class probabilities thresholded at >= threshold, in schema order.
BundlePrediction combine_bundle_predict(const BinaryClassifierBundle& bundle, const FeatureMatrix& X,
                                        double threshold = 0.5);

void save_bundle(const std::string& dir, const BinaryClassifierBundle& bundle);
BinaryClassifierBundle load_bundle(const std::string& dir);

// Natively multi-label learners: one multi-output forest, or one boosted
// ensemble per label.
class MultiLabelModel {
public:
    Architecture architecture() const noexcept { return arch_; }
    const Json& combination() const noexcept { return combination_; }
    std::size_t n_labels() const noexcept { return n_labels_; }

    ScoreMatrix predict_proba(const FeatureMatrix& X) const;

    static MultiLabelModel fit(Architecture arch, const Json& combination, const FeatureMatrix& X, const LabelMatrix& Y,
                               std::uint64_t seed);

    void save(const std::string& dir) const;
    static MultiLabelModel load(const std::string& dir);

    // Set by the search; persisted with the model.
    Json selection;
    std::vector<std::string> classes;
    std::string embedding_backend;
    std::string schema_hash;
    std::uint64_t seed = 0;

private:
    Architecture arch_ = Architecture::RandomForest;
    Json combination_;
    std::size_t n_labels_ = 0;
    std::shared_ptr<const RandomForest> forest_;
    std::vector<BoostedTrees> boosted_;
};

// Fits every grid combination on the training portion and keeps the one with
// the highest validation macro average precision; validation AUROC and Hamming
// loss are recorded alongside.
MultiLabelModel train_native_multilabel(const FeatureMatrix& X_train, const LabelMatrix& Y_train, const FeatureMatrix& X_val,
                                        const LabelMatrix& Y_val, const HyperGrid& grid, std::uint64_t seed,
                                        std::size_t workers = 1);

}  // namespace odsurv::classic
