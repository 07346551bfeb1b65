#include "odsurv/classic/search.hpp"

#include <numeric>

#include "odsurv/common/error.hpp"
#include "odsurv/common/hash.hpp"
#include "odsurv/common/parallel.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/metrics/metrics.hpp"

namespace odsurv::classic {

std::size_t HyperGrid::size() const {
    std::size_t n = 1;
    for (auto it = grid.begin(); it != grid.end(); ++it) n *= it->size();
    return n;
}

void HyperGrid::validate() const {
    if (!grid.is_object() || grid.empty()) throw ConfigError(std::string("empty hyperparameter grid for ") + to_string(architecture));
    for (auto it = grid.begin(); it != grid.end(); ++it)
        if (!it->is_array() || it->empty())
            throw ConfigError("hyperparameter '" + it.key() + "' needs a non-empty list of candidates");
}

std::vector<Json> HyperGrid::combinations() const {
    validate();
    std::vector<std::string> keys;
    for (auto it = grid.begin(); it != grid.end(); ++it) keys.push_back(it.key());
    std::vector<Json> out;
    std::vector<std::size_t> pos(keys.size(), 0);
    for (;;) {
        Json c = Json::object();
        for (std::size_t k = 0; k < keys.size(); ++k) c[keys[k]] = grid.at(keys[k]).at(pos[k]);
        out.push_back(std::move(c));
        std::size_t k = keys.size();
        while (k > 0) {
            --k;
            if (++pos[k] < grid.at(keys[k]).size()) break;
            pos[k] = 0;
            if (k == 0) return out;
        }
        if (keys.empty()) return out;
    }
}

Json HyperGrid::to_json() const { return Json{{"architecture", to_string(architecture)}, {"grid", grid}}; }

HyperGrid HyperGrid::from_json(const Json& j) {
    HyperGrid g;
    g.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    g.grid = j.at("grid");
    g.validate();
    return g;
}

HyperGrid default_grid(Architecture a) {
    HyperGrid g;
    g.architecture = a;
    switch (a) {
        case Architecture::LogisticRegression:
            g.grid = Json::parse(R"({"C": [0.01, 0.1, 1.0, 10.0, 100.0]})");
            break;
        case Architecture::SupportVector:
            g.grid = Json::parse(R"({"kernel": ["linear", "rbf"], "C": [0.1, 1.0, 10.0], "gamma": ["scale"]})");
            break;
        case Architecture::RandomForest:
            g.grid = Json::parse(
                R"({"n_estimators": [100, 300], "max_depth": [0, 10, 30], "min_samples_leaf": [1, 3], "max_features": ["sqrt"]})");
            break;
        case Architecture::GradientBoostedTrees:
            g.grid = Json::parse(R"({"n_estimators": [100, 300], "max_depth": [3, 6], "learning_rate": [0.05, 0.1, 0.3]})");
            break;
    }
    return g;
}

std::vector<HyperGrid> default_grids() {
    std::vector<HyperGrid> out;
    for (auto a : kAllArchitectures) out.push_back(default_grid(a));
    return out;
}

HyperGrid default_multilabel_grid(Architecture a) {
    HyperGrid g;
    g.architecture = a;
    if (a == Architecture::RandomForest)
        g.grid = Json::parse(R"({"n_estimators": [100, 300], "max_depth": [0, 20], "max_features": ["sqrt"]})");
    else if (a == Architecture::GradientBoostedTrees)
        g.grid = Json::parse(R"({"n_estimators": [100, 200], "max_depth": [3, 6], "learning_rate": [0.1, 0.3]})");
    else
        throw ConfigError(std::string(to_string(a)) + " has no native multi-label support");
    return g;
}

Json GridSearchResult::to_json() const {
    Json rs = Json::array();
    for (const auto& r : results)
        rs.push_back(Json{{"combination", r.combination}, {"fold_scores", r.fold_scores}, {"mean_score", r.mean_score}});
    return Json{{"architecture", to_string(architecture)},
                {"selected", best},
                {"tie_break", "first_in_grid_order"},
                {"fold_fingerprint", fold_fingerprint},
                {"results", rs}};
}

std::vector<int> stratified_folds(std::span<const std::uint8_t> y, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw TrainingError("labels contain a single class");
    if (pos.size() < 2 * folds || neg.size() < 2 * folds)
        throw TrainingError(std::to_string(folds) + "-fold search needs at least 2 positives and 2 negatives per fold (have " +
                            std::to_string(pos.size()) + " positives, " + std::to_string(neg.size()) +
                            " negatives); merge folds or reduce the fold count");
    Engine eng(stream_seed(seed, 0xF01D));
    portable_shuffle(pos, eng);
    portable_shuffle(neg, eng);
    std::vector<int> f(y.size(), -1);
    for (std::size_t k = 0; k < pos.size(); ++k) f[pos[k]] = static_cast<int>(k % folds);
    for (std::size_t k = 0; k < neg.size(); ++k) f[neg[k]] = static_cast<int>((pos.size() + k) % folds);
    return f;
}

std::string fold_fingerprint(std::span<const int> folds) {
    std::string s;
    s.reserve(folds.size() * 2);
    for (int f : folds) s += std::to_string(f) + ",";
    return sha256_hex(s);
}

std::size_t select_best(std::span<const CvResult> results) {
    if (results.empty()) throw ConfigError("no grid results to select from");
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i)
        if (results[i].mean_score > results[best].mean_score) best = i;
    return best;
}

namespace {

FeatureMatrix take_rows(const FeatureMatrix& X, const std::vector<std::size_t>& rows) {
    FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(rows[k]));
    return out;
}

}  // namespace

GridSearchResult grid_search_cv(const FeatureMatrix& X, std::span<const std::uint8_t> y, const HyperGrid& grid,
                                std::uint64_t seed, const SearchOptions& opts) {
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw ShapeError("feature rows and labels differ in length");
    require_finite(X);
    const auto combos = grid.combinations();
    const auto folds = stratified_folds(y, opts.folds, seed);

    struct FoldData {
        FeatureMatrix Xt, Xv;
        std::vector<std::uint8_t> yt, yv;
        std::vector<double> wt;
    };
    std::vector<FoldData> data(opts.folds);
    for (std::size_t f = 0; f < opts.folds; ++f) {
        std::vector<std::size_t> tr, va;
        for (std::size_t i = 0; i < y.size(); ++i) (folds[i] == static_cast<int>(f) ? va : tr).push_back(i);
        auto& d = data[f];
        d.Xt = take_rows(X, tr);
        d.Xv = take_rows(X, va);
        for (auto i : tr) d.yt.push_back(y[i]);
        for (auto i : va) d.yv.push_back(y[i]);
        if (opts.balance_classes) d.wt = balanced_weights(d.yt);
    }

    GridSearchResult out;
    out.architecture = grid.architecture;
    out.fold_fingerprint = fold_fingerprint(folds);
    out.results.resize(combos.size());
    std::vector<double> scores(combos.size() * opts.folds, 0.0);
    parallel_for(
        combos.size() * opts.folds,
        [&](std::size_t task) {
            const std::size_t c = task / opts.folds, f = task % opts.folds;
            FitOptions fo;
            fo.sample_weight = data[f].wt;
            fo.want_probability = false;
            fo.seed = stream_seed(seed, 0xC0DE + f);
            const auto model = fit_binary(grid.architecture, combos[c], data[f].Xt, data[f].yt, fo);
            const auto s = model->score(data[f].Xv);
            scores[task] = metrics::auroc(s, data[f].yv).value();
        },
        opts.workers);
    for (std::size_t c = 0; c < combos.size(); ++c) {
        auto& r = out.results[c];
        r.combination = combos[c];
        r.fold_scores.assign(scores.begin() + static_cast<long>(c * opts.folds), scores.begin() + static_cast<long>((c + 1) * opts.folds));
        r.mean_score = std::accumulate(r.fold_scores.begin(), r.fold_scores.end(), 0.0) / static_cast<double>(opts.folds);
    }
    out.best = select_best(out.results);
    return out;
}

}  // namespace odsurv::classic
