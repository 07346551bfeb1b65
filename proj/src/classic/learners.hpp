#pragma once

#include "odsurv/classic/models.hpp"

namespace odsurv::classic {

class LogisticModel : public BinaryModel {
public:
    LogisticModel(Eigen::VectorXd w, double b, LogisticParams p) : w_(std::move(w)), b_(b), p_(p) {}
    static LogisticModel fit(const LogisticParams& p, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                             std::span<const double> weight);
    Architecture architecture() const override { return Architecture::LogisticRegression; }
    std::vector<double> score(const FeatureMatrix& X) const override;
    std::vector<double> probability(const FeatureMatrix& X) const override;
    Json to_json() const override;
    static std::unique_ptr<LogisticModel> from_json(const Json& j);

    const Eigen::VectorXd& coef() const noexcept { return w_; }
    double intercept() const noexcept { return b_; }

private:
    Eigen::VectorXd w_;
    double b_;
    LogisticParams p_;
};

struct PlattSigmoid {
    double A = -1.0, B = 0.0;
    double operator()(double f) const;
    // Fit on decision values with targets smoothed towards the class priors.
    static PlattSigmoid fit(std::span<const double> dec, std::span<const std::uint8_t> y);
};

class SvmModel : public BinaryModel {
public:
    static SvmModel fit(const SvmParams& p, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                        std::span<const double> weight, bool probability, std::uint64_t seed);
    Architecture architecture() const override { return Architecture::SupportVector; }
    std::vector<double> score(const FeatureMatrix& X) const override;  // decision values
    std::vector<double> probability(const FeatureMatrix& X) const override;
    Json to_json() const override;
    static std::unique_ptr<SvmModel> from_json(const Json& j);

    double rho() const noexcept { return rho_; }
    std::size_t n_support() const noexcept { return static_cast<std::size_t>(coef_.size()); }

private:
    SvmParams p_;
    double gamma_ = 0.0;
    FeatureMatrix sv_;
    Eigen::VectorXd coef_;  // alpha_i * y_i
    Eigen::VectorXd w_;     // linear kernel only
    double rho_ = 0.0;
    std::optional<PlattSigmoid> platt_;
};

class ForestModel : public BinaryModel {
public:
    explicit ForestModel(RandomForest f) : f_(std::move(f)) {}
    Architecture architecture() const override { return Architecture::RandomForest; }
    std::vector<double> score(const FeatureMatrix& X) const override { return f_.predict(X); }
    std::vector<double> probability(const FeatureMatrix& X) const override { return f_.predict(X); }
    Json to_json() const override;

private:
    RandomForest f_;
};

class BoostingModel : public BinaryModel {
public:
    explicit BoostingModel(BoostedTrees b) : b_(std::move(b)) {}
    Architecture architecture() const override { return Architecture::GradientBoostedTrees; }
    std::vector<double> score(const FeatureMatrix& X) const override { return b_.margin(X); }
    std::vector<double> probability(const FeatureMatrix& X) const override;
    Json to_json() const override;

private:
    BoostedTrees b_;
};

double sigmoid(double z);

}  // namespace odsurv::classic
