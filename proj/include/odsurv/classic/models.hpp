#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace odsurv::classic {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Json = nlohmann::ordered_json;

enum class Architecture { LogisticRegression, GradientBoostedTrees, RandomForest, SupportVector };

const char* to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);
inline constexpr Architecture kAllArchitectures[] = {Architecture::LogisticRegression,
                                                     Architecture::GradientBoostedTrees,
                                                     Architecture::RandomForest, Architecture::SupportVector};

// Throws ValidationError naming the first row with a NaN or infinite value.
void require_finite(const FeatureMatrix& X);

// Per-sample weights n / (2 n_c) for binary labels, so the weights average 1.
std::vector<double> balanced_weights(std::span<const std::uint8_t> y);

// A trained binary classifier.
class BinaryModel {
public:
    virtual ~BinaryModel() = default;
    virtual Architecture architecture() const = 0;
    // Monotone ranking score (decision value or probability).
    virtual std::vector<double> score(const FeatureMatrix& X) const = 0;
    // Probability of the positive class.
    virtual std::vector<double> probability(const FeatureMatrix& X) const = 0;
    virtual Json to_json() const = 0;
};

struct FitOptions {
    std::vector<double> sample_weight;  // empty = unit weights
    bool want_probability = true;       // false skips calibration work during CV
    std::uint64_t seed = 0;
};

// Trains one model for a hyperparameter combination (a JSON object whose keys
// must be known to the architecture).
std::unique_ptr<BinaryModel> fit_binary(Architecture arch, const Json& combination, const FeatureMatrix& X,
                                        std::span<const std::uint8_t> y, const FitOptions& opts);

std::unique_ptr<BinaryModel> binary_model_from_json(const Json& j);

// ---- individual learners -------------------------------------------------

struct LogisticParams {
    double C = 1.0;
    int max_iter = 1000;
    double tol = 1e-6;
    static LogisticParams from_json(const Json& j);
};

struct SvmParams {
    std::string kernel = "rbf";  // "linear" or "rbf"
    double C = 1.0;
    std::optional<double> gamma;  // nullopt = 1 / (d * var(X))
    double eps = 1e-3;
    std::size_t cache_mb = 200;
    static SvmParams from_json(const Json& j);
};

struct ForestParams {
    int n_estimators = 100;
    int max_depth = 0;  // 0 = unlimited
    int min_samples_leaf = 1;
    int min_samples_split = 2;
    std::string max_features = "sqrt";  // "sqrt", "log2", "all" or a fraction
    bool bootstrap = true;
    static ForestParams from_json(const Json& j);
};

struct BoostingParams {
    int n_estimators = 100;
    int max_depth = 6;
    double learning_rate = 0.3;
    double reg_lambda = 1.0;
    double gamma = 0.0;
    double min_child_weight = 1.0;
    double subsample = 1.0;
    double colsample_bytree = 1.0;
    static BoostingParams from_json(const Json& j);
};

// Decision tree with per-node split (feature, threshold: go left if x <= t)
// and a vector of leaf values.
struct Tree {
    struct Node {
        int feature = -1;
        double threshold = 0.0;
        int left = -1, right = -1;
        int value_offset = 0;
    };
    std::vector<Node> nodes;
    std::vector<double> values;
    int n_outputs = 1;

    const double* leaf(const double* x) const;
    Json to_json() const;
    static Tree from_json(const Json& j);
};

// Multi-output classification forest: every leaf holds the weighted positive
// fraction of each output; predictions average leaves across trees.
class RandomForest {
public:
    static RandomForest fit(const ForestParams& p, const FeatureMatrix& X, const std::vector<std::vector<std::uint8_t>>& Y,
                            std::span<const double> sample_weight, std::uint64_t seed);
    // N x n_outputs probabilities, row-major.
    std::vector<double> predict(const FeatureMatrix& X) const;
    int n_outputs() const noexcept { return n_outputs_; }
    std::size_t size() const noexcept { return trees_.size(); }
    Json to_json() const;
    static RandomForest from_json(const Json& j);

private:
    std::vector<Tree> trees_;
    int n_outputs_ = 1;
};

// Second-order boosting of regression trees on the logistic loss.
class BoostedTrees {
public:
    static BoostedTrees fit(const BoostingParams& p, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                            std::span<const double> sample_weight, std::uint64_t seed);
    std::vector<double> margin(const FeatureMatrix& X) const;
    std::size_t size() const noexcept { return trees_.size(); }
    Json to_json() const;
    static BoostedTrees from_json(const Json& j);

private:
    std::vector<Tree> trees_;
    double base_margin_ = 0.0;
};

}  // namespace odsurv::classic
