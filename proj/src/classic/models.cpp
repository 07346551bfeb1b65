#include <cmath>
#include <set>

#include "learners.hpp"
#include "odsurv/common/error.hpp"

namespace odsurv::classic {

const char* to_string(Architecture a) {
    switch (a) {
        case Architecture::LogisticRegression: return "logistic_regression";
        case Architecture::GradientBoostedTrees: return "gradient_boosted_trees";
        case Architecture::RandomForest: return "random_forest";
        case Architecture::SupportVector: return "support_vector";
    }
    return "?";
}

Architecture architecture_from_string(const std::string& s) {
    for (auto a : kAllArchitectures)
        if (s == to_string(a)) return a;
    throw ConfigError("unknown architecture '" + s + "'");
}

void require_finite(const FeatureMatrix& X) {
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        if (!X.row(i).allFinite()) throw ValidationError("non-finite feature value in row " + std::to_string(i));
}

std::vector<double> balanced_weights(std::span<const std::uint8_t> y) {
    double pos = 0;
    for (auto v : y) pos += v ? 1 : 0;
    const double n = static_cast<double>(y.size()), neg = n - pos;
    if (pos == 0 || neg == 0) throw TrainingError("class weights need both classes present");
    std::vector<double> w(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) w[i] = y[i] ? n / (2 * pos) : n / (2 * neg);
    return w;
}

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> known, const char* arch) {
    if (!j.is_object()) throw ConfigError(std::string("hyperparameters for ") + arch + " must be an object");
    std::set<std::string> ok(known.begin(), known.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw ConfigError("unknown hyperparameter '" + it.key() + "' for " + arch);
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("hyperparameter '") + key + "' has the wrong type");
    }
}

}  // namespace

LogisticParams LogisticParams::from_json(const Json& j) {
    check_keys(j, {"C", "max_iter", "tol"}, "logistic_regression");
    LogisticParams p;
    p.C = get_or(j, "C", p.C);
    p.max_iter = get_or(j, "max_iter", p.max_iter);
    p.tol = get_or(j, "tol", p.tol);
    return p;
}

SvmParams SvmParams::from_json(const Json& j) {
    check_keys(j, {"kernel", "C", "gamma", "eps", "cache_mb"}, "support_vector");
    SvmParams p;
    p.kernel = get_or(j, "kernel", p.kernel);
    p.C = get_or(j, "C", p.C);
    if (j.contains("gamma")) {
        if (j.at("gamma").is_string()) {
            if (j.at("gamma") != "scale") throw ConfigError("gamma must be a number or \"scale\"");
        } else {
            p.gamma = get_or(j, "gamma", 0.0);
            if (!(*p.gamma > 0)) throw ConfigError("gamma must be positive");
        }
    }
    p.eps = get_or(j, "eps", p.eps);
    p.cache_mb = get_or(j, "cache_mb", p.cache_mb);
    return p;
}

ForestParams ForestParams::from_json(const Json& j) {
    check_keys(j, {"n_estimators", "max_depth", "min_samples_leaf", "min_samples_split", "max_features", "bootstrap"},
               "random_forest");
    ForestParams p;
    p.n_estimators = get_or(j, "n_estimators", p.n_estimators);
    if (j.contains("max_depth") && j.at("max_depth").is_null()) p.max_depth = 0;
    else p.max_depth = get_or(j, "max_depth", p.max_depth);
    p.min_samples_leaf = get_or(j, "min_samples_leaf", p.min_samples_leaf);
    p.min_samples_split = get_or(j, "min_samples_split", p.min_samples_split);
    if (j.contains("max_features") && j.at("max_features").is_number())
        p.max_features = std::to_string(j.at("max_features").get<double>());
    else
        p.max_features = get_or(j, "max_features", p.max_features);
    p.bootstrap = get_or(j, "bootstrap", p.bootstrap);
    return p;
}

BoostingParams BoostingParams::from_json(const Json& j) {
    check_keys(j, {"n_estimators", "max_depth", "learning_rate", "reg_lambda", "gamma", "min_child_weight", "subsample",
                   "colsample_bytree"},
               "gradient_boosted_trees");
    BoostingParams p;
    p.n_estimators = get_or(j, "n_estimators", p.n_estimators);
    p.max_depth = get_or(j, "max_depth", p.max_depth);
    p.learning_rate = get_or(j, "learning_rate", p.learning_rate);
    p.reg_lambda = get_or(j, "reg_lambda", p.reg_lambda);
    p.gamma = get_or(j, "gamma", p.gamma);
    p.min_child_weight = get_or(j, "min_child_weight", p.min_child_weight);
    p.subsample = get_or(j, "subsample", p.subsample);
    p.colsample_bytree = get_or(j, "colsample_bytree", p.colsample_bytree);
    return p;
}

Json ForestModel::to_json() const {
    Json j{{"architecture", to_string(architecture())}};
    j["forest"] = f_.to_json();
    return j;
}

std::vector<double> BoostingModel::probability(const FeatureMatrix& X) const {
    auto m = b_.margin(X);
    for (auto& v : m) v = sigmoid(v);
    return m;
}

Json BoostingModel::to_json() const {
    Json j{{"architecture", to_string(architecture())}};
    j["boosting"] = b_.to_json();
    return j;
}

std::unique_ptr<BinaryModel> fit_binary(Architecture arch, const Json& combination, const FeatureMatrix& X,
                                        std::span<const std::uint8_t> y, const FitOptions& opts) {
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw ShapeError("feature rows and labels differ in length");
    if (!opts.sample_weight.empty() && opts.sample_weight.size() != y.size())
        throw ShapeError("sample weights and labels differ in length");
    std::size_t pos = 0;
    for (auto v : y) pos += v ? 1 : 0;
    if (pos == 0 || pos == y.size()) throw TrainingError("training labels contain a single class");
    switch (arch) {
        case Architecture::LogisticRegression:
            return std::make_unique<LogisticModel>(
                LogisticModel::fit(LogisticParams::from_json(combination), X, y, opts.sample_weight));
        case Architecture::SupportVector:
            return std::make_unique<SvmModel>(SvmModel::fit(SvmParams::from_json(combination), X, y, opts.sample_weight,
                                                            opts.want_probability, opts.seed));
        case Architecture::RandomForest: {
            std::vector<std::vector<std::uint8_t>> Y{std::vector<std::uint8_t>(y.begin(), y.end())};
            return std::make_unique<ForestModel>(
                RandomForest::fit(ForestParams::from_json(combination), X, Y, opts.sample_weight, opts.seed));
        }
        case Architecture::GradientBoostedTrees:
            return std::make_unique<BoostingModel>(
                BoostedTrees::fit(BoostingParams::from_json(combination), X, y, opts.sample_weight, opts.seed));
    }
    throw ConfigError("unknown architecture");
}

std::unique_ptr<BinaryModel> binary_model_from_json(const Json& j) {
    switch (architecture_from_string(j.at("architecture").get<std::string>())) {
        case Architecture::LogisticRegression: return LogisticModel::from_json(j);
        case Architecture::SupportVector: return SvmModel::from_json(j);
        case Architecture::RandomForest:
            return std::make_unique<ForestModel>(RandomForest::from_json(j.at("forest")));
        case Architecture::GradientBoostedTrees:
            return std::make_unique<BoostingModel>(BoostedTrees::from_json(j.at("boosting")));
    }
    throw ConfigError("unknown architecture");
}

}  // namespace odsurv::classic
