#include <cmath>
#include <deque>

#include "learners.hpp"
#include "odsurv/common/error.hpp"

namespace odsurv::classic {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct Objective {
    const FeatureMatrix& X;
    std::span<const std::uint8_t> y;
    std::span<const double> s;
    double C;

    // x = [w; b]; returns f and writes the gradient.
    double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
        const auto d = X.cols();
        const Eigen::VectorXd z = (X * x.head(d)).array() + x(d);
        Eigen::VectorXd r(z.size());
        double loss = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double si = s.empty() ? 1.0 : s[static_cast<std::size_t>(i)];
            const double yi = y[static_cast<std::size_t>(i)];
            loss += si * (softplus(z(i)) - yi * z(i));
            r(i) = si * (sigmoid(z(i)) - yi);
        }
        g.resize(d + 1);
        g.head(d) = x.head(d) + C * (X.transpose() * r);
        g(d) = C * r.sum();
        return 0.5 * x.head(d).squaredNorm() + C * loss;
    }
};

}  // namespace

LogisticModel LogisticModel::fit(const LogisticParams& p, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                                 std::span<const double> weight) {
    if (p.C <= 0) throw ConfigError("logistic regression C must be positive");
    const auto d = X.cols();
    Objective obj{X, y, weight, p.C};
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d + 1), g, g_new;
    double f = obj(x, g);

    // Limited-memory BFGS with an Armijo backtracking line search.
    constexpr std::size_t kMemory = 10;
    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> history;
    for (int iter = 0; iter < p.max_iter; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() <= p.tol * std::max(1.0, std::abs(f) / static_cast<double>(X.rows() + 1)))
            break;
        Eigen::VectorXd q = g;
        std::vector<double> alpha(history.size());
        for (std::size_t k = history.size(); k-- > 0;) {
            const auto& [sk, yk] = history[k];
            alpha[k] = sk.dot(q) / yk.dot(sk);
            q -= alpha[k] * yk;
        }
        if (!history.empty()) {
            const auto& [sk, yk] = history.back();
            q *= sk.dot(yk) / yk.squaredNorm();
        } else {
            q /= std::max(1.0, g.norm());
        }
        for (std::size_t k = 0; k < history.size(); ++k) {
            const auto& [sk, yk] = history[k];
            const double beta = yk.dot(q) / yk.dot(sk);
            q += sk * (alpha[k] - beta);
        }
        Eigen::VectorXd dir = -q;
        double slope = g.dot(dir);
        if (slope >= 0) {
            dir = -g;
            slope = -g.squaredNorm();
            history.clear();
        }
        double step = 1.0, f_new = f;
        Eigen::VectorXd x_new;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = obj(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        Eigen::VectorXd sk = x_new - x, yk = g_new - g;
        if (sk.dot(yk) > 1e-12 * yk.squaredNorm()) {
            history.emplace_back(std::move(sk), std::move(yk));
            if (history.size() > kMemory) history.pop_front();
        }
        const double decrease = f - f_new;
        x = std::move(x_new);
        g = g_new;
        f = f_new;
        if (decrease <= 1e-14 * std::max(1.0, std::abs(f))) break;
    }
    if (!x.allFinite()) throw TrainingError("logistic regression diverged");
    return LogisticModel(x.head(d), x(d), p);
}

std::vector<double> LogisticModel::score(const FeatureMatrix& X) const {
    if (X.cols() != w_.size()) throw ShapeError("feature width differs from the trained model");
    const Eigen::VectorXd z = (X * w_).array() + b_;
    return {z.data(), z.data() + z.size()};
}

std::vector<double> LogisticModel::probability(const FeatureMatrix& X) const {
    auto z = score(X);
    for (auto& v : z) v = sigmoid(v);
    return z;
}

Json LogisticModel::to_json() const {
    return Json{{"architecture", to_string(architecture())},
                {"C", p_.C},
                {"coef", std::vector<double>(w_.data(), w_.data() + w_.size())},
                {"intercept", b_}};
}

std::unique_ptr<LogisticModel> LogisticModel::from_json(const Json& j) {
    const auto c = j.at("coef").get<std::vector<double>>();
    LogisticParams p;
    p.C = j.at("C").get<double>();
    return std::make_unique<LogisticModel>(Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())),
                                           j.at("intercept").get<double>(), p);
}

}  // namespace odsurv::classic
