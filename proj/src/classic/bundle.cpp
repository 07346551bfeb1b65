#include "odsurv/classic/bundle.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "odsurv/common/error.hpp"
#include "odsurv/common/parallel.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/metrics/metrics.hpp"

namespace fs = std::filesystem;

namespace odsurv::classic {

namespace {

void write_json(const fs::path& p, const Json& j) {
    std::ofstream out(p);
    out << j.dump(1) << '\n';
    if (!out) throw IngestError("cannot write " + p.string());
}

Json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open " + p.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p.string() + " is not valid JSON: " + e.what());
    }
}

std::string file_stem(std::size_t index, const std::string& name) {
    std::string s = std::to_string(index) + "_";
    for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    return s;
}

}  // namespace

BinaryClassifierBundle train_per_drug_bundle(const std::vector<ClassTrainingSet>& sets, const std::vector<HyperGrid>& grids,
                                             std::uint64_t seed, const BundleOptions& opts) {
    if (grids.empty()) throw ConfigError("no architectures to search");
    BinaryClassifierBundle b;
    b.seed = seed;
    for (std::size_t c = 0; c < sets.size(); ++c) {
        const auto& set = sets[c];
        b.classes.push_back(set.class_name);
        if (std::find(opts.skip_classes.begin(), opts.skip_classes.end(), set.class_name) != opts.skip_classes.end())
            continue;
        const std::uint64_t class_seed = stream_seed(seed, c);
        try {
            ClassModel best;
            Json search = Json::array();
            bool have = false;
            for (const auto& grid : grids) {
                const auto r = grid_search_cv(set.X, set.y, grid, class_seed, opts.search);
                search.push_back(r.to_json());
                if (!have || r.best_result().mean_score > best.cv_score) {
                    have = true;
                    best.architecture = grid.architecture;
                    best.combination = r.best_result().combination;
                    best.cv_score = r.best_result().mean_score;
                }
            }
            FitOptions fo;
            fo.sample_weight = opts.search.balance_classes ? balanced_weights(set.y) : std::vector<double>{};
            fo.want_probability = true;
            fo.seed = stream_seed(class_seed, 0x2EF1);
            best.model = fit_binary(best.architecture, best.combination, set.X, set.y, fo);
            best.search = std::move(search);
            b.per_class.emplace(set.class_name, std::move(best));
        } catch (const Error& e) {
            b.failures[set.class_name] = e.what();
        }
    }
    return b;
}

BundlePrediction combine_bundle_predict(const BinaryClassifierBundle& bundle, const FeatureMatrix& X, double threshold) {
    const std::size_t n = static_cast<std::size_t>(X.rows()), k = bundle.classes.size();
    BundlePrediction out{LabelMatrix(n, k), ScoreMatrix(n, k)};
    for (std::size_t c = 0; c < k; ++c) {
        auto it = bundle.per_class.find(bundle.classes[c]);
        if (it == bundle.per_class.end() || !it->second.model)
            throw ConfigError("bundle has no model for class '" + bundle.classes[c] + "'");
        if (n == 0) continue;
        const auto p = it->second.model->probability(X);
        for (std::size_t i = 0; i < n; ++i) {
            out.scores(i, c) = p[i];
            out.labels(i, c) = p[i] >= threshold ? 1 : 0;
        }
    }
    return out;
}

void save_bundle(const std::string& dir, const BinaryClassifierBundle& b) {
    fs::create_directories(fs::path(dir) / "models");
    Json manifest{{"format_version", kBundleFormatVersion},
                  {"kind", "per_class_bundle"},
                  {"classes", b.classes},
                  {"embedding_backend", b.embedding_backend},
                  {"schema_hash", b.schema_hash},
                  {"seed", b.seed},
                  {"decision_rule", "probability >= 0.5"}};
    Json per = Json::object();
    for (std::size_t c = 0; c < b.classes.size(); ++c) {
        auto it = b.per_class.find(b.classes[c]);
        if (it == b.per_class.end()) continue;
        const auto file = "models/" + file_stem(c, b.classes[c]) + ".json";
        write_json(fs::path(dir) / file, it->second.model->to_json());
        per[b.classes[c]] = Json{{"architecture", to_string(it->second.architecture)},
                                 {"combination", it->second.combination},
                                 {"cv_score", it->second.cv_score},
                                 {"file", file},
                                 {"search", it->second.search}};
    }
    manifest["per_class"] = per;
    Json failures = Json::object();
    for (const auto& [k, v] : b.failures) failures[k] = v;
    manifest["failures"] = failures;
    write_json(fs::path(dir) / "manifest.json", manifest);
}

BinaryClassifierBundle load_bundle(const std::string& dir) {
    const auto m = read_json(fs::path(dir) / "manifest.json");
    if (m.value("kind", "") != "per_class_bundle") throw ConfigError(dir + " is not a per-class bundle");
    if (m.value("format_version", 0) != kBundleFormatVersion) throw ConfigError(dir + ": unsupported bundle format version");
    BinaryClassifierBundle b;
    b.classes = m.at("classes").get<std::vector<std::string>>();
    b.embedding_backend = m.value("embedding_backend", "");
    b.schema_hash = m.value("schema_hash", "");
    b.seed = m.value("seed", std::uint64_t{0});
    for (auto it = m.at("per_class").begin(); it != m.at("per_class").end(); ++it) {
        ClassModel cm;
        cm.architecture = architecture_from_string(it->at("architecture").get<std::string>());
        cm.combination = it->at("combination");
        cm.cv_score = it->at("cv_score").get<double>();
        cm.search = it->value("search", Json::array());
        cm.model = binary_model_from_json(read_json(fs::path(dir) / it->at("file").get<std::string>()));
        b.per_class.emplace(it.key(), std::move(cm));
    }
    for (auto it = m.at("failures").begin(); it != m.at("failures").end(); ++it) b.failures[it.key()] = it->get<std::string>();
    return b;
}

ScoreMatrix MultiLabelModel::predict_proba(const FeatureMatrix& X) const {
    const std::size_t n = static_cast<std::size_t>(X.rows());
    ScoreMatrix out(n, n_labels_);
    if (n == 0) return out;
    if (forest_) {
        const auto p = forest_->predict(X);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n_labels_; ++k) out(i, k) = p[i * n_labels_ + k];
    } else {
        for (std::size_t k = 0; k < n_labels_; ++k) {
            const auto m = boosted_[k].margin(X);
            for (std::size_t i = 0; i < n; ++i) out(i, k) = 1.0 / (1.0 + std::exp(-m[i]));
        }
    }
    return out;
}

MultiLabelModel MultiLabelModel::fit(Architecture arch, const Json& combination, const FeatureMatrix& X, const LabelMatrix& Y,
                                     std::uint64_t seed) {
    if (static_cast<std::size_t>(X.rows()) != Y.rows()) throw ShapeError("feature rows and label rows differ");
    if (Y.rows() == 0) throw TrainingError("empty training split");
    MultiLabelModel m;
    m.arch_ = arch;
    m.combination_ = combination;
    m.n_labels_ = Y.cols();
    m.seed = seed;
    if (arch == Architecture::RandomForest) {
        std::vector<std::vector<std::uint8_t>> cols;
        for (std::size_t k = 0; k < Y.cols(); ++k) cols.push_back(Y.column(k));
        m.forest_ = std::make_shared<const RandomForest>(RandomForest::fit(ForestParams::from_json(combination), X, cols, {}, seed));
    } else if (arch == Architecture::GradientBoostedTrees) {
        const auto p = BoostingParams::from_json(combination);
        for (std::size_t k = 0; k < Y.cols(); ++k) m.boosted_.push_back(BoostedTrees::fit(p, X, Y.column(k), {}, stream_seed(seed, k)));
    } else {
        throw ConfigError(std::string(to_string(arch)) + " has no native multi-label support");
    }
    return m;
}

void MultiLabelModel::save(const std::string& dir) const {
    fs::create_directories(dir);
    Json manifest{{"format_version", kBundleFormatVersion},
                  {"kind", "multilabel"},
                  {"architecture", to_string(arch_)},
                  {"combination", combination_},
                  {"classes", classes},
                  {"n_labels", n_labels_},
                  {"embedding_backend", embedding_backend},
                  {"schema_hash", schema_hash},
                  {"seed", seed},
                  {"decision_rule", "probability >= 0.5"},
                  {"selection", selection}};
    write_json(fs::path(dir) / "manifest.json", manifest);
    Json model;
    if (forest_) {
        model = forest_->to_json();
    } else {
        model = Json::array();
        for (const auto& b : boosted_) model.push_back(b.to_json());
    }
    write_json(fs::path(dir) / "model.json", model);
}

MultiLabelModel MultiLabelModel::load(const std::string& dir) {
    const auto m = read_json(fs::path(dir) / "manifest.json");
    if (m.value("kind", "") != "multilabel") throw ConfigError(dir + " is not a multi-label model");
    if (m.value("format_version", 0) != kBundleFormatVersion) throw ConfigError(dir + ": unsupported model format version");
    MultiLabelModel out;
    out.arch_ = architecture_from_string(m.at("architecture").get<std::string>());
    out.combination_ = m.at("combination");
    out.classes = m.value("classes", std::vector<std::string>{});
    out.n_labels_ = m.at("n_labels").get<std::size_t>();
    out.embedding_backend = m.value("embedding_backend", "");
    out.schema_hash = m.value("schema_hash", "");
    out.seed = m.value("seed", std::uint64_t{0});
    out.selection = m.value("selection", Json::object());
    const auto model = read_json(fs::path(dir) / "model.json");
    if (out.arch_ == Architecture::RandomForest) {
        out.forest_ = std::make_shared<const RandomForest>(RandomForest::from_json(model));
    } else {
        for (const auto& b : model) out.boosted_.push_back(BoostedTrees::from_json(b));
    }
    return out;
}

MultiLabelModel train_native_multilabel(const FeatureMatrix& X_train, const LabelMatrix& Y_train, const FeatureMatrix& X_val,
                                        const LabelMatrix& Y_val, const HyperGrid& grid, std::uint64_t seed,
                                        std::size_t workers) {
    require_finite(X_train);
    require_finite(X_val);
    if (grid.architecture != Architecture::RandomForest && grid.architecture != Architecture::GradientBoostedTrees)
        throw ConfigError(std::string(to_string(grid.architecture)) + " has no native multi-label support");
    if (Y_train.cols() != Y_val.cols()) throw ShapeError("train and validation label widths differ");
    const auto combos = grid.combinations();
    std::vector<MultiLabelModel> models(combos.size());
    std::vector<Json> rows(combos.size());
    std::vector<double> ap(combos.size(), 0.0);
    parallel_for(
        combos.size(),
        [&](std::size_t c) {
            models[c] = MultiLabelModel::fit(grid.architecture, combos[c], X_train, Y_train, seed);
            const auto scores = models[c].predict_proba(X_val);
            LabelMatrix pred(scores.rows(), scores.cols());
            for (std::size_t i = 0; i < scores.rows(); ++i)
                for (std::size_t k = 0; k < scores.cols(); ++k) pred(i, k) = scores(i, k) >= 0.5 ? 1 : 0;
            const auto rank = metrics::ranking_metrics(scores, Y_val);
            ap[c] = rank.macro_average_precision.value_or(0.0);
            rows[c] = Json{{"combination", combos[c]},
                           {"validation_average_precision", rank.macro_average_precision ? Json(*rank.macro_average_precision) : Json()},
                           {"validation_auroc", rank.macro_auroc ? Json(*rank.macro_auroc) : Json()},
                           {"validation_hamming_loss", metrics::hamming_loss(pred, Y_val)}};
        },
        workers);
    std::size_t best = 0;
    for (std::size_t c = 1; c < combos.size(); ++c)
        if (ap[c] > ap[best]) best = c;
    auto out = std::move(models[best]);
    out.selection = Json{{"metric", "validation_macro_average_precision"},
                         {"tie_break", "first_in_grid_order"},
                         {"selected", best},
                         {"candidates", rows}};
    return out;
}

}  // namespace odsurv::classic
