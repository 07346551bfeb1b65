#include <algorithm>
#include <cmath>
#include <numeric>

#include "learners.hpp"
#include "odsurv/common/error.hpp"
#include "odsurv/common/rng.hpp"

namespace odsurv::classic {

const double* Tree::leaf(const double* x) const {
    int n = 0;
    while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
        const auto& node = nodes[static_cast<std::size_t>(n)];
        n = x[node.feature] <= node.threshold ? node.left : node.right;
    }
    return values.data() + nodes[static_cast<std::size_t>(n)].value_offset;
}

Json Tree::to_json() const {
    std::vector<int> feature, left, right, offset;
    std::vector<double> threshold;
    for (const auto& n : nodes) {
        feature.push_back(n.feature);
        threshold.push_back(n.threshold);
        left.push_back(n.left);
        right.push_back(n.right);
        offset.push_back(n.value_offset);
    }
    return Json{{"n_outputs", n_outputs}, {"feature", feature}, {"threshold", threshold}, {"left", left},
                {"right", right}, {"value_offset", offset}, {"values", values}};
}

Tree Tree::from_json(const Json& j) {
    Tree t;
    t.n_outputs = j.at("n_outputs").get<int>();
    const auto feature = j.at("feature").get<std::vector<int>>();
    const auto threshold = j.at("threshold").get<std::vector<double>>();
    const auto left = j.at("left").get<std::vector<int>>();
    const auto right = j.at("right").get<std::vector<int>>();
    const auto offset = j.at("value_offset").get<std::vector<int>>();
    t.values = j.at("values").get<std::vector<double>>();
    for (std::size_t i = 0; i < feature.size(); ++i) t.nodes.push_back({feature[i], threshold[i], left[i], right[i], offset[i]});
    return t;
}

namespace {

double midpoint(double a, double b) {
    const double m = a + (b - a) / 2;
    return m >= b ? a : m;
}

int resolve_max_features(const std::string& spec, int d) {
    if (spec == "sqrt") return std::max(1, static_cast<int>(std::sqrt(static_cast<double>(d))));
    if (spec == "log2") return std::max(1, static_cast<int>(std::log2(static_cast<double>(d))));
    if (spec == "all") return d;
    double frac = 0;
    try {
        frac = std::stod(spec);
    } catch (...) {
        throw ConfigError("max_features must be sqrt, log2, all or a fraction");
    }
    if (!(frac > 0 && frac <= 1)) throw ConfigError("max_features fraction must be in (0, 1]");
    return std::max(1, static_cast<int>(frac * d));
}

// Weighted Gini classification tree over K binary outputs (impurity averaged).
class CartBuilder {
public:
    CartBuilder(const FeatureMatrix& X, const std::vector<std::vector<std::uint8_t>>& Y, std::vector<double> w,
                const ForestParams& p, Engine& eng)
        : X_(X), Y_(Y), w_(std::move(w)), p_(p), eng_(eng), K_(static_cast<int>(Y.size())) {
        max_features_ = resolve_max_features(p.max_features, static_cast<int>(X.cols()));
    }

    Tree build(std::vector<std::size_t> idx) {
        tree_ = Tree{};
        tree_.n_outputs = K_;
        grow(idx, 0);
        return std::move(tree_);
    }

private:
    struct Stats {
        double w = 0;
        std::vector<double> pos;
    };

    Stats stats(const std::vector<std::size_t>& idx) const {
        Stats s;
        s.pos.assign(static_cast<std::size_t>(K_), 0.0);
        for (auto i : idx) {
            s.w += w_[i];
            for (int k = 0; k < K_; ++k)
                if (Y_[static_cast<std::size_t>(k)][i]) s.pos[static_cast<std::size_t>(k)] += w_[i];
        }
        return s;
    }

    // Weighted impurity mass w * mean_k gini_k.
    double impurity_mass(double w, const std::vector<double>& pos) const {
        if (w <= 0) return 0;
        double g = 0;
        for (double p : pos) {
            const double f = p / w;
            g += 2 * f * (1 - f);
        }
        return w * g / K_;
    }

    int make_leaf(const Stats& s) {
        Tree::Node n;
        n.value_offset = static_cast<int>(tree_.values.size());
        for (double p : s.pos) tree_.values.push_back(s.w > 0 ? p / s.w : 0.0);
        tree_.nodes.push_back(n);
        return static_cast<int>(tree_.nodes.size() - 1);
    }

    int grow(std::vector<std::size_t>& idx, int depth) {
        const Stats s = stats(idx);
        const double parent = impurity_mass(s.w, s.pos);
        const auto n = static_cast<int>(idx.size());
        if ((p_.max_depth > 0 && depth >= p_.max_depth) || n < p_.min_samples_split || n < 2 * p_.min_samples_leaf ||
            parent <= 1e-15 * std::max(1.0, s.w))
            return make_leaf(s);

        std::vector<int> features(static_cast<std::size_t>(X_.cols()));
        std::iota(features.begin(), features.end(), 0);
        portable_shuffle(features, eng_);

        int best_feature = -1;
        double best_cost = std::numeric_limits<double>::infinity(), best_threshold = 0;
        int visited = 0;
        std::vector<std::size_t> order(idx);
        std::vector<double> left_pos(static_cast<std::size_t>(K_)), right_pos(static_cast<std::size_t>(K_));
        for (int f : features) {
            if (visited >= max_features_ && best_feature >= 0) break;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const double xa = X_(static_cast<Eigen::Index>(a), f), xb = X_(static_cast<Eigen::Index>(b), f);
                return xa < xb || (xa == xb && a < b);
            });
            const double lo = X_(static_cast<Eigen::Index>(order.front()), f);
            const double hi = X_(static_cast<Eigen::Index>(order.back()), f);
            if (!(lo < hi)) continue;  // constant features do not count towards max_features
            ++visited;
            std::fill(left_pos.begin(), left_pos.end(), 0.0);
            double wl = 0;
            for (int p = 0; p + 1 < n; ++p) {
                const auto i = order[static_cast<std::size_t>(p)];
                wl += w_[i];
                for (int k = 0; k < K_; ++k)
                    if (Y_[static_cast<std::size_t>(k)][i]) left_pos[static_cast<std::size_t>(k)] += w_[i];
                const int nl = p + 1, nr = n - nl;
                if (nl < p_.min_samples_leaf || nr < p_.min_samples_leaf) continue;
                const double x0 = X_(static_cast<Eigen::Index>(i), f);
                const double x1 = X_(static_cast<Eigen::Index>(order[static_cast<std::size_t>(p + 1)]), f);
                if (!(x0 < x1)) continue;
                for (int k = 0; k < K_; ++k)
                    right_pos[static_cast<std::size_t>(k)] = s.pos[static_cast<std::size_t>(k)] - left_pos[static_cast<std::size_t>(k)];
                const double cost = impurity_mass(wl, left_pos) + impurity_mass(s.w - wl, right_pos);
                if (cost < best_cost) {
                    best_cost = cost;
                    best_feature = f;
                    best_threshold = midpoint(x0, x1);
                }
            }
        }
        if (best_feature < 0) return make_leaf(s);

        std::vector<std::size_t> left, right;
        for (auto i : idx) (X_(static_cast<Eigen::Index>(i), best_feature) <= best_threshold ? left : right).push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        const int self = static_cast<int>(tree_.nodes.size());
        tree_.nodes.push_back(Tree::Node{best_feature, best_threshold, -1, -1, 0});
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        tree_.nodes[static_cast<std::size_t>(self)].left = l;
        tree_.nodes[static_cast<std::size_t>(self)].right = r;
        return self;
    }

    const FeatureMatrix& X_;
    const std::vector<std::vector<std::uint8_t>>& Y_;
    std::vector<double> w_;
    const ForestParams& p_;
    Engine& eng_;
    int K_;
    int max_features_ = 1;
    Tree tree_;
};

// Exact greedy regression tree on gradient/hessian statistics.
class BoostBuilder {
public:
    BoostBuilder(const FeatureMatrix& X, const std::vector<double>& g, const std::vector<double>& h,
                 const BoostingParams& p, std::vector<int> features)
        : X_(X), g_(g), h_(h), p_(p), features_(std::move(features)) {}

    Tree build(std::vector<std::size_t> idx) {
        tree_ = Tree{};
        grow(idx, 0);
        return std::move(tree_);
    }

private:
    double score(double G, double H) const { return G * G / (H + p_.reg_lambda); }

    int make_leaf(double G, double H) {
        Tree::Node n;
        n.value_offset = static_cast<int>(tree_.values.size());
        tree_.values.push_back(-G / (H + p_.reg_lambda) * p_.learning_rate);
        tree_.nodes.push_back(n);
        return static_cast<int>(tree_.nodes.size() - 1);
    }

    int grow(std::vector<std::size_t>& idx, int depth) {
        double G = 0, H = 0;
        for (auto i : idx) {
            G += g_[i];
            H += h_[i];
        }
        if (depth >= p_.max_depth || idx.size() < 2) return make_leaf(G, H);
        const double parent = score(G, H);
        int best_feature = -1;
        double best_gain = 0, best_threshold = 0;
        std::vector<std::size_t> order(idx);
        for (int f : features_) {
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const double xa = X_(static_cast<Eigen::Index>(a), f), xb = X_(static_cast<Eigen::Index>(b), f);
                return xa < xb || (xa == xb && a < b);
            });
            double GL = 0, HL = 0;
            for (std::size_t p = 0; p + 1 < order.size(); ++p) {
                const auto i = order[p];
                GL += g_[i];
                HL += h_[i];
                const double x0 = X_(static_cast<Eigen::Index>(i), f);
                const double x1 = X_(static_cast<Eigen::Index>(order[p + 1]), f);
                if (!(x0 < x1)) continue;
                const double GR = G - GL, HR = H - HL;
                if (HL < p_.min_child_weight || HR < p_.min_child_weight) continue;
                const double gain = 0.5 * (score(GL, HL) + score(GR, HR) - parent) - p_.gamma;
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = midpoint(x0, x1);
                }
            }
        }
        if (best_feature < 0) return make_leaf(G, H);
        std::vector<std::size_t> left, right;
        for (auto i : idx) (X_(static_cast<Eigen::Index>(i), best_feature) <= best_threshold ? left : right).push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        const int self = static_cast<int>(tree_.nodes.size());
        tree_.nodes.push_back(Tree::Node{best_feature, best_threshold, -1, -1, 0});
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        tree_.nodes[static_cast<std::size_t>(self)].left = l;
        tree_.nodes[static_cast<std::size_t>(self)].right = r;
        return self;
    }

    const FeatureMatrix& X_;
    const std::vector<double>& g_;
    const std::vector<double>& h_;
    const BoostingParams& p_;
    std::vector<int> features_;
    Tree tree_;
};

}  // namespace

RandomForest RandomForest::fit(const ForestParams& p, const FeatureMatrix& X,
                               const std::vector<std::vector<std::uint8_t>>& Y, std::span<const double> sample_weight,
                               std::uint64_t seed) {
    if (p.n_estimators <= 0) throw ConfigError("n_estimators must be positive");
    if (p.min_samples_leaf <= 0 || p.min_samples_split < 2) throw ConfigError("invalid minimum sample sizes");
    if (Y.empty()) throw ConfigError("random forest needs at least one output");
    const auto n = static_cast<std::size_t>(X.rows());
    for (const auto& y : Y)
        if (y.size() != n) throw ShapeError("label length differs from feature rows");
    RandomForest f;
    f.n_outputs_ = static_cast<int>(Y.size());
    f.trees_.resize(static_cast<std::size_t>(p.n_estimators));
    for (int t = 0; t < p.n_estimators; ++t) {
        Engine eng(stream_seed(seed, static_cast<std::uint64_t>(t)));
        std::vector<double> w(n, 0.0);
        std::vector<std::size_t> idx;
        if (p.bootstrap) {
            std::vector<int> counts(n, 0);
            for (std::size_t k = 0; k < n; ++k) ++counts[uniform_below(eng, n)];
            for (std::size_t i = 0; i < n; ++i)
                if (counts[i] > 0) {
                    idx.push_back(i);
                    w[i] = counts[i] * (sample_weight.empty() ? 1.0 : sample_weight[i]);
                }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                idx.push_back(i);
                w[i] = sample_weight.empty() ? 1.0 : sample_weight[i];
            }
        }
        CartBuilder b(X, Y, std::move(w), p, eng);
        f.trees_[static_cast<std::size_t>(t)] = b.build(std::move(idx));
    }
    return f;
}

std::vector<double> RandomForest::predict(const FeatureMatrix& X) const {
    const auto K = static_cast<std::size_t>(n_outputs_);
    std::vector<double> out(static_cast<std::size_t>(X.rows()) * K, 0.0);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double* x = X.row(i).data();
        double* o = out.data() + static_cast<std::size_t>(i) * K;
        for (const auto& t : trees_) {
            const double* v = t.leaf(x);
            for (std::size_t k = 0; k < K; ++k) o[k] += v[k];
        }
        for (std::size_t k = 0; k < K; ++k) o[k] /= static_cast<double>(trees_.size());
    }
    return out;
}

Json RandomForest::to_json() const {
    Json trees = Json::array();
    for (const auto& t : trees_) trees.push_back(t.to_json());
    return Json{{"n_outputs", n_outputs_}, {"trees", trees}};
}

RandomForest RandomForest::from_json(const Json& j) {
    RandomForest f;
    f.n_outputs_ = j.at("n_outputs").get<int>();
    for (const auto& t : j.at("trees")) f.trees_.push_back(Tree::from_json(t));
    return f;
}

BoostedTrees BoostedTrees::fit(const BoostingParams& p, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                               std::span<const double> sample_weight, std::uint64_t seed) {
    if (p.n_estimators <= 0 || p.max_depth <= 0) throw ConfigError("boosting needs positive n_estimators and max_depth");
    if (!(p.learning_rate > 0) || !(p.subsample > 0 && p.subsample <= 1) || !(p.colsample_bytree > 0 && p.colsample_bytree <= 1))
        throw ConfigError("invalid boosting rate or sampling fraction");
    const auto n = static_cast<std::size_t>(X.rows());
    BoostedTrees b;
    std::vector<double> margin(n, b.base_margin_), g(n), h(n);
    const int d = static_cast<int>(X.cols());
    for (int round = 0; round < p.n_estimators; ++round) {
        Engine eng(stream_seed(seed, static_cast<std::uint64_t>(round)));
        for (std::size_t i = 0; i < n; ++i) {
            const double pr = sigmoid(margin[i]);
            const double w = sample_weight.empty() ? 1.0 : sample_weight[i];
            g[i] = (pr - y[i]) * w;
            h[i] = std::max(pr * (1 - pr), 1e-16) * w;
        }
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
            if (p.subsample >= 1 || uniform_unit(eng) < p.subsample) idx.push_back(i);
        std::vector<int> features(static_cast<std::size_t>(d));
        std::iota(features.begin(), features.end(), 0);
        if (p.colsample_bytree < 1) {
            portable_shuffle(features, eng);
            features.resize(static_cast<std::size_t>(std::max(1, static_cast<int>(p.colsample_bytree * d))));
            std::sort(features.begin(), features.end());
        }
        BoostBuilder builder(X, g, h, p, std::move(features));
        Tree t = builder.build(std::move(idx));
        for (std::size_t i = 0; i < n; ++i) margin[i] += *t.leaf(X.row(static_cast<Eigen::Index>(i)).data());
        b.trees_.push_back(std::move(t));
    }
    return b;
}

std::vector<double> BoostedTrees::margin(const FeatureMatrix& X) const {
    std::vector<double> out(static_cast<std::size_t>(X.rows()), base_margin_);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (const auto& t : trees_) out[static_cast<std::size_t>(i)] += *t.leaf(X.row(i).data());
    return out;
}

Json BoostedTrees::to_json() const {
    Json trees = Json::array();
    for (const auto& t : trees_) trees.push_back(t.to_json());
    return Json{{"base_margin", base_margin_}, {"trees", trees}};
}

BoostedTrees BoostedTrees::from_json(const Json& j) {
    BoostedTrees b;
    b.base_margin_ = j.at("base_margin").get<double>();
    for (const auto& t : j.at("trees")) b.trees_.push_back(Tree::from_json(t));
    return b;
}

}  // namespace odsurv::classic
