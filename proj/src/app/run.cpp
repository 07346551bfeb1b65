#include "odsurv/app/run.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>

#include "odsurv/analysis/explain.hpp"
#include "odsurv/classic/bundle.hpp"
#include "odsurv/common/csv.hpp"
#include "odsurv/common/hash.hpp"
#include "odsurv/corpus/split.hpp"
#include "odsurv/embeddings/embedder.hpp"
#include "odsurv/finetune/finetune.hpp"
#include "odsurv/llm/harness.hpp"
#include "odsurv/metrics/report.hpp"

#ifndef ODSURV_VERSION
#define ODSURV_VERSION "0.0.0"
#endif

namespace odsurv::app {

namespace fs = std::filesystem;
using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

const char* toolkit_version() { return ODSURV_VERSION; }

const char* const kPredictTag = "predict";

namespace {

std::string utc_now(bool compact = false) {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm g{};
    gmtime_r(&t, &g);
    char buf[32];
    std::strftime(buf, sizeof buf, compact ? "%Y%m%dT%H%M%SZ" : "%Y-%m-%dT%H:%M:%SZ", &g);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IngestError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Write-then-rename so readers never see a half-written file.
void write_file(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StageError("cannot write " + p.string());
        out << content;
        if (!out) throw StageError("write failed for " + p.string());
    }
    fs::rename(tmp, p);
}

Json read_json(const fs::path& p) {
    try {
        return Json::parse(read_file(p));
    } catch (const Json::exception& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::vector<ArtifactRecord> hash_artifacts(const fs::path& run_dir, const std::vector<std::string>& rels) {
    std::vector<ArtifactRecord> out;
    auto add = [&](const fs::path& full) {
        out.push_back({fs::relative(full, run_dir).generic_string(), sha256_file(full), fs::file_size(full)});
    };
    for (const auto& rel : rels) {
        const fs::path full = run_dir / rel;
        if (fs::is_directory(full)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(full))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) add(f);
        } else {
            add(full);
        }
    }
    return out;
}

bool artifacts_verify(const fs::path& run_dir, const std::vector<ArtifactRecord>& arts) {
    for (const auto& a : arts) {
        const fs::path full = run_dir / a.path;
        if (!fs::is_regular_file(full) || fs::file_size(full) != a.bytes || sha256_file(full) != a.sha256) return false;
    }
    return true;
}

OJson artifact_json(const ArtifactRecord& a) { return {{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}}; }

std::string sorted_ids_fingerprint(std::vector<std::string> ids) {
    corpus::DatasetSplit s;
    s.test = std::move(ids);
    return s.test_fingerprint();
}

std::vector<std::string> case_ids(const std::vector<corpus::LabeledCase>& cases) {
    std::vector<std::string> ids;
    ids.reserve(cases.size());
    for (const auto& c : cases) ids.push_back(c.id());
    return ids;
}

std::vector<std::string> case_texts(const std::vector<corpus::LabeledCase>& cases) {
    std::vector<std::string> t;
    t.reserve(cases.size());
    for (const auto& c : cases) t.push_back(c.normalized_text);
    return t;
}

corpus::StopList stop_list_for(const DatasetSpec& d) {
    return d.stop_list.empty() ? corpus::default_stop_list() : corpus::load_stop_list(d.stop_list);
}

struct LoadedDataset {
    std::vector<corpus::LabeledCase> cases;
    OJson summary;
};

LoadedDataset load_dataset(const DatasetSpec& d, const corpus::LabelSchema& schema) {
    const auto ingested = corpus::ingest_records(d.records, d.schema_map);
    std::map<std::string, LabelVector> gold;
    if (!d.gold.empty()) gold = corpus::read_gold_labels(d.gold, schema);
    else if (d.require_gold) throw ValidationError("dataset " + d.records + " has no gold file but require_gold is set");
    LoadedDataset out;
    out.cases = corpus::attach_labels(ingested.records, gold, schema, stop_list_for(d), d.require_gold);
    if (out.cases.empty()) throw ValidationError("no usable records in " + d.records);
    out.summary["records"] = d.records;
    out.summary["n_cases"] = out.cases.size();
    out.summary["stop_list"] = d.stop_list.empty() ? std::string(corpus::kDefaultStopListVersion) : d.stop_list;
    out.summary["ingest"] = ingested.report_json();
    out.summary["lint"] = corpus::lint_labels(out.cases, schema).to_json();
    return out;
}

classic::FeatureMatrix features(const embeddings::Embedder& e, const std::vector<corpus::LabeledCase>& cases) {
    const auto vecs = e.embed(case_texts(cases));
    classic::FeatureMatrix X(static_cast<Eigen::Index>(cases.size()), static_cast<Eigen::Index>(e.dim()));
    for (std::size_t i = 0; i < vecs.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = vecs[i].values.transpose();
    return X;
}

void check_schema(const std::string& what, const std::vector<std::string>& classes, const std::string& hash,
                  const corpus::LabelSchema& schema) {
    if (classes != schema.classes || (!hash.empty() && hash != schema.hash()))
        throw ConfigError(what + " was trained on a different label schema");
}

embeddings::EmbedderConfig embedder_for(const ModelSpec& m, const std::string& dir) {
    if (m.embedder_given) return m.embedder;
    const fs::path p = fs::path(dir) / "embedder.json";
    if (!fs::exists(p)) throw ConfigError("model '" + m.name + "' has no embedder config and " + p.string() + " is missing");
    return embeddings::EmbedderConfig::from_json(read_json(p));
}

class ClassicSinglePredictor : public Predictor {
public:
    ClassicSinglePredictor(const RunConfig& c, const ModelSpec& m, const std::string& dir)
        : bundle_(classic::load_bundle(dir)),
          embedder_(embeddings::Embedder::load(embedder_for(m, dir), c.model_repo)),
          threshold_(m.threshold) {
        check_schema("model '" + m.name + "'", bundle_.classes, bundle_.schema_hash, c.schema);
    }
    Output predict(const std::vector<corpus::LabeledCase>& cases, const std::string&) override {
        auto p = classic::combine_bundle_predict(bundle_, features(embedder_, cases), threshold_);
        return {std::move(p.labels), std::move(p.scores), {}};
    }

private:
    classic::BinaryClassifierBundle bundle_;
    embeddings::Embedder embedder_;
    double threshold_;
};

class ClassicMultiPredictor : public Predictor {
public:
    ClassicMultiPredictor(const RunConfig& c, const ModelSpec& m, const std::string& dir)
        : model_(classic::MultiLabelModel::load(dir)),
          embedder_(embeddings::Embedder::load(embedder_for(m, dir), c.model_repo)),
          threshold_(m.threshold) {
        check_schema("model '" + m.name + "'", model_.classes, model_.schema_hash, c.schema);
    }
    Output predict(const std::vector<corpus::LabeledCase>& cases, const std::string&) override {
        Output out;
        out.scores = model_.predict_proba(features(embedder_, cases));
        out.labels = finetune::threshold_labels(*out.scores, threshold_);
        return out;
    }

private:
    classic::MultiLabelModel model_;
    embeddings::Embedder embedder_;
    double threshold_;
};

class EncoderPredictor : public Predictor {
public:
    EncoderPredictor(const RunConfig& c, const ModelSpec& m, const std::string& dir)
        : model_(finetune::load_classifier(dir)), spec_(m), schema_(c.schema), workers_(c.workers) {
        check_schema("model '" + m.name + "'", model_.bundle.classes, model_.bundle.schema_hash, c.schema);
    }
    Output predict(const std::vector<corpus::LabeledCase>& cases, const std::string&) override {
        finetune::InferenceStats stats;
        Output out;
        out.scores = finetune::predict_probabilities(model_, case_texts(cases), spec_.inference_batch_size, &stats, workers_);
        out.labels = finetune::threshold_labels(*out.scores, model_.threshold);
        if (spec_.finetune.repair_implications) finetune::repair_implications(out.labels, schema_);
        out.diagnostics["throughput"] = stats.to_json();
        return out;
    }
    const finetune::EncoderClassifier& model() const { return model_; }

private:
    finetune::EncoderClassifier model_;
    ModelSpec spec_;
    corpus::LabelSchema schema_;
    std::size_t workers_;
};

std::unique_ptr<llm::ModelClient> make_client(const ModelSpec& m, const std::vector<corpus::LabeledCase>& echo_cases,
                                              const corpus::LabelSchema& schema, const std::string& handle = {}) {
    if (m.client.kind == "mock_echo") return llm::make_echo_client(echo_cases, schema);
    auto cfg = m.client.http;
    if (!handle.empty()) cfg.model = handle;
    return std::make_unique<llm::HttpClient>(cfg);
}

class LlmPredictor : public Predictor {
public:
    LlmPredictor(const RunConfig& c, const ModelSpec& m, const std::string& dir,
                 const std::vector<corpus::LabeledCase>& pool)
        : spec_(m), schema_(c.schema), pool_(llm::ExemplarPool::from_cases(pool)) {
        if (m.sft) {
            const fs::path p = fs::path(dir) / "sft.json";
            if (!fs::exists(p)) throw StageError("model '" + m.name + "' has no sft.json; run its train stage first");
            handle_ = read_json(p).value("model_handle", std::string{});
        }
    }
    Output predict(const std::vector<corpus::LabeledCase>& cases, const std::string& dataset_tag) override {
        auto client = make_client(spec_, cases, schema_, handle_);
        auto opts = spec_.generation;
        opts.dataset_tag = dataset_tag;
        opts.allow_exemplar_overlap = dataset_tag == kPredictTag;
        opts.bootstrap.n = 1;  // metrics are recomputed by the caller
        auto ev = llm::evaluate_generations(*client, cases, spec_.prompt, pool_, schema_, opts);
        records = std::move(ev.records);
        Output out;
        out.labels = std::move(ev.predictions);
        out.diagnostics["parse"] = ev.stats.to_json();
        out.diagnostics["exemplar_ids"] = ev.exemplar_ids;
        out.diagnostics["client"] = client->name();
        return out;
    }
    std::vector<llm::GenerationRecord> records;

private:
    ModelSpec spec_;
    corpus::LabelSchema schema_;
    llm::ExemplarPool pool_;
    std::string handle_;
};

class EventLog {
public:
    explicit EventLog(fs::path path) : path_(std::move(path)) {}
    void emit(OJson event) {
        OJson line{{"ts", utc_now()}};
        for (auto& [k, v] : event.items()) line[k] = v;
        std::lock_guard lk(mu_);
        std::ofstream out(path_, std::ios::app);
        out << line.dump() << '\n';
    }

private:
    fs::path path_;
    std::mutex mu_;
};

int stage_rank(Until u) { return static_cast<int>(u); }

class Runner {
public:
    Runner(const RunConfig& c, const RunOptions& o, std::string dir)
        : cfg_(c), opts_(o), dir_(std::move(dir)), events_(dir_ / "events.jsonl") {}

    RunManifest run() {
        const fs::path manifest_path = dir_ / "manifest.json";
        if (fs::exists(manifest_path)) previous_ = RunManifest::load(dir_.string());
        const fs::path config_path = dir_ / "config.json";
        if (!fs::exists(config_path)) write_file(config_path, cfg_.source_text);

        m_ = previous_ ? *previous_ : RunManifest{};
        m_.run_dir = dir_.string();
        m_.run_key = cfg_.run_key();
        m_.config_hash = sha256_file(config_path);
        m_.config_base_dir = cfg_.base_dir;
        m_.toolkit_version = toolkit_version();
        if (m_.created.empty()) m_.created = utc_now();
        m_.env_overrides = cfg_.env_overrides;
        events_.emit({{"event", "run_start"}, {"run_key", m_.run_key}, {"until", stage_rank(opts_.until)}});

        bool ok = run_stages();
        m_.updated = utc_now();
        m_.status = !ok ? "failed" : (complete() ? "completed" : "partial");
        save();
        events_.emit({{"event", "run_end"}, {"status", m_.status}});
        return m_;
    }

private:
    bool selected(const ModelSpec& m) const { return opts_.models.empty() || opts_.models.count(m.name); }

    static bool has_train_stage(const ModelSpec& m) {
        if (!m.artifact.empty()) return false;
        return m.family != Family::Llm || m.sft.has_value();
    }

    std::vector<std::string> expected_stages() const {
        std::vector<std::string> s;
        if (cfg_.internal) s.push_back("ingest:internal");
        if (cfg_.external) s.push_back("ingest:external");
        if (cfg_.internal) s.push_back("split");
        for (const auto& m : cfg_.models) {
            if (has_train_stage(m)) s.push_back("train:" + m.name);
            if (m.evaluate_internal) s.push_back("evaluate:" + m.name + ":internal");
            if (m.evaluate_external && cfg_.external) s.push_back("evaluate:" + m.name + ":external");
        }
        if (cfg_.explain) s.push_back("explain:" + cfg_.explain->model);
        return s;
    }

    bool complete() const {
        for (const auto& name : expected_stages()) {
            const auto* st = m_.stage(name);
            if (!st || st->status == "failed") return false;
        }
        return true;
    }

    void save() { write_file(dir_ / "manifest.json", m_.to_json().dump(2) + "\n"); }

    bool reusable(const std::string& name) const {
        if (!previous_) return false;
        const auto* st = previous_->stage(name);
        return st && (st->status == "completed" || st->status == "reused") && artifacts_verify(dir_, st->artifacts);
    }

    void record(StageRecord rec) {
        for (auto& s : m_.stages)
            if (s.name == rec.name) {
                s = std::move(rec);
                return;
            }
        m_.stages.push_back(std::move(rec));
    }

    // body(reuse) returns the run-relative paths it produced.
    bool stage(const std::string& name, const std::function<std::vector<std::string>(bool)>& body) {
        StageRecord rec;
        rec.name = name;
        rec.started = utc_now();
        const auto t0 = std::chrono::steady_clock::now();
        bool reuse = reusable(name);
        events_.emit({{"event", "stage_start"}, {"stage", name}, {"reuse", reuse}});
        try {
            std::vector<std::string> produced;
            if (reuse) {
                try {
                    produced = body(true);
                } catch (const std::exception& e) {
                    events_.emit({{"event", "warning"}, {"stage", name}, {"message", std::string("reuse failed: ") + e.what()}});
                    reuse = false;
                }
            }
            if (!reuse) produced = body(false);
            rec.status = reuse ? "reused" : "completed";
            rec.artifacts = reuse ? previous_->stage(name)->artifacts : hash_artifacts(dir_, produced);
        } catch (const Error& e) {
            rec.status = "failed";
            rec.error = e.what();
            rec.error_kind = to_string(e.kind());
        } catch (const std::exception& e) {
            rec.status = "failed";
            rec.error = e.what();
            rec.error_kind = to_string(ErrorKind::Stage);
        }
        rec.finished = utc_now();
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        OJson end{{"event", "stage_end"}, {"stage", name}, {"status", rec.status}, {"seconds", rec.seconds}};
        if (!rec.error.empty()) end["error"] = rec.error;
        events_.emit(end);
        const bool ok = rec.status != "failed";
        record(std::move(rec));
        save();
        return ok;
    }

    bool run_stages() {
        if (cfg_.internal && !stage("ingest:internal", [&](bool reuse) { return ingest("internal", *cfg_.internal, internal_, reuse); }))
            return false;
        if (cfg_.external && !stage("ingest:external", [&](bool reuse) { return ingest("external", *cfg_.external, external_, reuse); }))
            return false;
        if (opts_.until == Until::Ingest) return true;
        if (cfg_.internal && !stage("split", [&](bool reuse) { return split(reuse); })) return false;
        if (opts_.until == Until::Split) return true;

        for (const auto& m : cfg_.models) {
            if (!selected(m) || !has_train_stage(m)) continue;
            if (!stage("train:" + m.name, [&](bool reuse) { return train(m, reuse); })) return false;
        }
        if (opts_.until == Until::Train) return true;

        for (const auto& m : cfg_.models) {
            if (!selected(m)) continue;
            if (m.evaluate_internal &&
                !stage("evaluate:" + m.name + ":internal", [&](bool reuse) { return evaluate(m, "internal", reuse); }))
                return false;
            if (m.evaluate_external && cfg_.external &&
                !stage("evaluate:" + m.name + ":external", [&](bool reuse) { return evaluate(m, "external", reuse); }))
                return false;
        }
        if (opts_.explain && cfg_.explain && selected(cfg_.model(cfg_.explain->model)) &&
            !stage("explain:" + cfg_.explain->model, [&](bool reuse) { return explain(reuse); }))
            return false;
        return true;
    }

    std::vector<std::string> ingest(const std::string& tag, const DatasetSpec& d, std::vector<corpus::LabeledCase>& into,
                                    bool reuse) {
        auto loaded = load_dataset(d, cfg_.schema);
        into = std::move(loaded.cases);
        const std::string rel = "data/" + tag + ".summary.json";
        if (!reuse) write_file(dir_ / rel, loaded.summary.dump(2) + "\n");
        return {rel};
    }

    std::vector<std::string> split(bool reuse) {
        const std::string rel = "split.json";
        if (reuse) {
            split_ = corpus::DatasetSplit::from_json(read_json(dir_ / rel));
            std::set<std::string> known;
            for (const auto& c : internal_) known.insert(c.id());
            for (const auto* part : {&split_.train, &split_.validation, &split_.test})
                for (const auto& id : *part)
                    if (!known.count(id)) throw SplitError("split.json names unknown case " + id);
            return {rel};
        }
        split_ = corpus::make_splits(internal_, cfg_.split_strategy, cfg_.seed, cfg_.split_target, cfg_.schema);
        write_file(dir_ / rel, split_.to_json().dump(2) + "\n");
        events_.emit({{"event", "split"},
                      {"train", split_.train.size()},
                      {"validation", split_.validation.size()},
                      {"test", split_.test.size()},
                      {"test_fingerprint", split_.test_fingerprint()}});
        return {rel};
    }

    std::vector<corpus::LabeledCase> part(const std::vector<std::string>& ids) const {
        return corpus::select_cases(internal_, ids);
    }

    std::vector<std::string> train(const ModelSpec& m, bool reuse) {
        const std::string rel = "models/" + m.name;
        if (reuse) return {rel};
        const fs::path dir = dir_ / rel;
        fs::remove_all(dir);  // leftovers of a failed attempt
        fs::create_directories(dir);
        const auto train_cases = part(split_.train);
        const auto val_cases = part(split_.validation);
        std::vector<std::string> seen = split_.train;

        switch (m.family) {
            case Family::ClassicSingle: {
                // Per-class search runs its own CV, so validation cases join the fit.
                auto cases = train_cases;
                cases.insert(cases.end(), val_cases.begin(), val_cases.end());
                seen.insert(seen.end(), split_.validation.begin(), split_.validation.end());
                const auto embedder = embeddings::Embedder::load(m.embedder, cfg_.model_repo);
                const auto X = features(embedder, cases);
                const auto Y = corpus::label_matrix(cases, cfg_.schema.size());
                std::vector<classic::ClassTrainingSet> sets;
                for (std::size_t c = 0; c < cfg_.schema.size(); ++c) sets.push_back({cfg_.schema.classes[c], X, Y.column(c)});
                classic::BundleOptions bo;
                bo.search = m.search;
                auto bundle = classic::train_per_drug_bundle(sets, m.grids, cfg_.seed, bo);
                if (!bundle.failures.empty()) {
                    std::string msg = "per-class training failed:";
                    for (const auto& [cls, err] : bundle.failures) msg += " " + cls + " (" + err + ")";
                    throw TrainingError(msg);
                }
                bundle.embedding_backend = embeddings::to_string(m.embedder.backend);
                bundle.schema_hash = cfg_.schema.hash();
                classic::save_bundle(dir.string(), bundle);
                write_file(dir / "embedder.json", m.embedder.to_json().dump(2) + "\n");
                break;
            }
            case Family::ClassicMulti: {
                if (val_cases.empty())
                    throw ConfigError("model '" + m.name + "' selects on validation data; use the random_60_20_20 split");
                seen.insert(seen.end(), split_.validation.begin(), split_.validation.end());
                const auto embedder = embeddings::Embedder::load(m.embedder, cfg_.model_repo);
                auto model = classic::train_native_multilabel(
                    features(embedder, train_cases), corpus::label_matrix(train_cases, cfg_.schema.size()),
                    features(embedder, val_cases), corpus::label_matrix(val_cases, cfg_.schema.size()), m.grids.front(),
                    cfg_.seed, cfg_.workers);
                model.classes = cfg_.schema.classes;
                model.embedding_backend = embeddings::to_string(m.embedder.backend);
                model.schema_hash = cfg_.schema.hash();
                model.save(dir.string());
                write_file(dir / "embedder.json", m.embedder.to_json().dump(2) + "\n");
                break;
            }
            case Family::Encoder: {
                seen.insert(seen.end(), split_.validation.begin(), split_.validation.end());
                auto result = finetune::finetune_encoder(
                    train_cases, val_cases, cfg_.schema, m.finetune, cfg_.model_repo, [&](const finetune::EpochLog& e) {
                        events_.emit({{"event", "epoch"},
                                      {"stage", "train:" + m.name},
                                      {"epoch", e.epoch},
                                      {"train_loss", e.train_loss},
                                      {"validation_macro_f1", e.validation_macro_f1},
                                      {"seconds", e.seconds}});
                    });
                finetune::save_classifier(dir.string(), result.model);
                OJson log = OJson::array();
                for (const auto& e : result.epochs)
                    log.push_back({{"epoch", e.epoch},
                                   {"train_loss", e.train_loss},
                                   {"validation_macro_f1", e.validation_macro_f1},
                                   {"seconds", e.seconds}});
                write_file(dir / "training.json",
                           OJson{{"best_epoch", result.best_epoch}, {"epochs", log}}.dump(2) + "\n");
                break;
            }
            case Family::Llm: {
                auto client = make_client(m, train_cases, cfg_.schema);
                const auto result = llm::run_sft(*client, train_cases, cfg_.schema, *m.sft);
                if (!result.warning.empty())
                    events_.emit({{"event", "warning"}, {"stage", "train:" + m.name}, {"message", result.warning}});
                write_file(dir / "sft.json", result.to_json().dump(2) + "\n");
                break;
            }
        }
        std::sort(seen.begin(), seen.end());
        write_file(dir / "training_ids.json", Json(seen).dump() + "\n");
        return {rel};
    }

    Predictor& predictor(const ModelSpec& m) {
        auto it = predictors_.find(m.name);
        if (it == predictors_.end())
            it = predictors_.emplace(m.name, load_predictor(cfg_, dir_.string(), m, part(split_.train))).first;
        return *it->second;
    }

    std::vector<std::string> evaluate(const ModelSpec& m, const std::string& which, bool reuse) {
        const std::string tag = which + "_test";
        const std::string base = m.name + "." + tag;
        const std::string report_rel = "reports/" + base + ".json";
        if (reuse) {
            add_report(metrics::report_from_json(read_json(dir_ / report_rel)), report_rel);
            return {};
        }
        const auto cases = which == "internal" ? part(split_.test) : external_;
        const auto ids = case_ids(cases);
        auto& pred = predictor(m);
        if (which == "internal")
            for (const auto& id : ids)
                if (pred.training_ids.count(id))
                    throw StageError("case " + id + " of the internal test partition was seen in training by '" + m.name + "'");

        auto out = pred.predict(cases, tag);
        const auto gold = corpus::label_matrix(cases, cfg_.schema.size());
        const ScoreMatrix* scores = out.scores ? &*out.scores : nullptr;
        auto report = metrics::evaluate(out.labels, gold, scores, cfg_.schema.classes, m.name, tag, cfg_.bootstrap);
        report.split_fingerprint = which == "internal" ? split_.test_fingerprint() : sorted_ids_fingerprint(ids);

        std::vector<std::string> produced{report_rel, "predictions/" + base + ".csv", "errors/" + base + ".csv"};
        write_file(dir_ / report_rel, metrics::to_json(report).dump(2) + "\n");
        write_predictions_csv((dir_ / produced[1]).string(), ids, out.labels, scores, cfg_.schema);
        write_file(dir_ / produced[2],
                   analysis::build_error_table(out.labels, gold, ids, cfg_.schema).to_delimited(','));
        if (!out.diagnostics.empty()) {
            produced.push_back("diagnostics/" + base + ".json");
            write_file(dir_ / produced.back(), out.diagnostics.dump(2) + "\n");
            if (out.diagnostics.contains("throughput")) {
                const auto& t = out.diagnostics["throughput"];
                events_.emit({{"event", "throughput"},
                              {"stage", "evaluate:" + m.name + ":" + which},
                              {"cases", t["n_texts"]},
                              {"seconds", t["total_seconds"]},
                              {"cases_per_second", t["texts_per_second"]}});
            }
        }
        if (auto* l = dynamic_cast<LlmPredictor*>(&pred)) {
            produced.push_back("generations/" + base + ".jsonl");
            fs::create_directories((dir_ / produced.back()).parent_path());
            llm::write_generation_log((dir_ / produced.back()).string(), l->records, cfg_.schema);
        }
        add_report(report, report_rel);
        return produced;
    }

    void add_report(const metrics::MetricReport& r, const std::string& rel) {
        ReportRef ref{r.model_tag, r.dataset_tag, rel, r.split_fingerprint};
        for (auto& x : m_.reports)
            if (x.model == ref.model && x.dataset == ref.dataset) {
                x = ref;
                return;
            }
        m_.reports.push_back(ref);
    }

    std::vector<std::string> explain(bool reuse) {
        const auto& x = *cfg_.explain;
        const std::string base = "explain/" + x.model + "." + x.target_class;
        if (reuse) return {base + ".json", base + ".html"};
        const auto& m = cfg_.model(x.model);
        auto* enc = dynamic_cast<EncoderPredictor*>(&predictor(m));
        if (!enc) throw ConfigError("explain.model must be an encoder model");
        const std::size_t cls = cfg_.schema.require_index(x.target_class);
        const auto test = part(split_.test);
        std::vector<corpus::LabeledCase> chosen;
        for (const auto& c : test)
            if (chosen.size() < x.n_cases && c.gold[cls]) chosen.push_back(c);
        for (const auto& c : test)  // too few positives: fill from the rest
            if (chosen.size() < x.n_cases && !c.gold[cls]) chosen.push_back(c);
        auto maps = analysis::attribute_many(enc->model(), case_texts(chosen), x.target_class, x.steps, cfg_.workers);
        OJson arr = OJson::array();
        for (std::size_t i = 0; i < maps.size(); ++i) {
            maps[i].case_id = chosen[i].id();
            arr.push_back(maps[i].to_json());
        }
        write_file(dir_ / (base + ".json"), arr.dump(2) + "\n");
        write_file(dir_ / (base + ".html"), analysis::render_attribution_report(maps, analysis::ReportFormat::Html));
        return {base + ".json", base + ".html"};
    }

    const RunConfig& cfg_;
    RunOptions opts_;
    fs::path dir_;
    EventLog events_;
    std::optional<RunManifest> previous_;
    RunManifest m_;
    std::vector<corpus::LabeledCase> internal_, external_;
    corpus::DatasetSplit split_;
    std::map<std::string, std::unique_ptr<Predictor>> predictors_;
};

}  // namespace

const StageRecord* RunManifest::stage(const std::string& n) const {
    for (const auto& s : stages)
        if (s.name == n) return &s;
    return nullptr;
}

const StageRecord* RunManifest::failed_stage() const {
    for (const auto& s : stages)
        if (s.status == "failed") return &s;
    return nullptr;
}

bool RunManifest::all_reused() const {
    return !stages.empty() &&
           std::all_of(stages.begin(), stages.end(), [](const StageRecord& s) { return s.status == "reused"; });
}

OJson RunManifest::to_json() const {
    OJson j;
    j["run_key"] = run_key;
    j["config_hash"] = config_hash;
    j["config_base_dir"] = config_base_dir;
    j["toolkit_version"] = toolkit_version;
    j["created"] = created;
    j["updated"] = updated;
    j["status"] = status;
    j["reused"] = all_reused();
    j["env_overrides"] = env_overrides;
    OJson st = OJson::array();
    for (const auto& s : stages) {
        OJson r{{"name", s.name}, {"status", s.status}, {"started", s.started}, {"finished", s.finished}, {"seconds", s.seconds}};
        if (!s.error.empty()) {
            r["error"] = s.error;
            r["error_kind"] = s.error_kind;
        }
        OJson arts = OJson::array();
        for (const auto& a : s.artifacts) arts.push_back(artifact_json(a));
        r["artifacts"] = arts;
        st.push_back(r);
    }
    j["stages"] = st;
    OJson reps = OJson::array();
    for (const auto& r : reports)
        reps.push_back({{"model", r.model}, {"dataset", r.dataset}, {"path", r.path}, {"split_fingerprint", r.split_fingerprint}});
    j["reports"] = reps;
    return j;
}

RunManifest RunManifest::from_json(const Json& j) {
    RunManifest m;
    try {
        m.run_key = j.at("run_key").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.toolkit_version = j.value("toolkit_version", "");
        m.config_base_dir = j.value("config_base_dir", "");
        m.created = j.value("created", "");
        m.updated = j.value("updated", "");
        m.status = j.value("status", "");
        m.env_overrides = j.value("env_overrides", std::map<std::string, std::string>{});
        for (const auto& s : j.at("stages")) {
            StageRecord r;
            r.name = s.at("name").get<std::string>();
            r.status = s.at("status").get<std::string>();
            r.started = s.value("started", "");
            r.finished = s.value("finished", "");
            r.seconds = s.value("seconds", 0.0);
            r.error = s.value("error", "");
            r.error_kind = s.value("error_kind", "");
            for (const auto& a : s.at("artifacts"))
                r.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                                       a.at("bytes").get<std::uintmax_t>()});
            m.stages.push_back(std::move(r));
        }
        for (const auto& r : j.at("reports"))
            m.reports.push_back({r.at("model").get<std::string>(), r.at("dataset").get<std::string>(),
                                 r.at("path").get<std::string>(), r.value("split_fingerprint", "")});
    } catch (const Json::exception& e) {
        throw ParseError(std::string("malformed run manifest: ") + e.what());
    }
    return m;
}

RunManifest RunManifest::load(const std::string& run_dir) {
    auto m = from_json(read_json(fs::path(run_dir) / "manifest.json"));
    m.run_dir = run_dir;
    return m;
}

std::vector<std::string> RunManifest::verify() const {
    std::vector<std::string> problems;
    const fs::path dir(run_dir);
    const fs::path cfg = dir / "config.json";
    if (!fs::exists(cfg)) problems.push_back("config.json missing");
    else if (sha256_file(cfg) != config_hash) problems.push_back("config.json hash mismatch");
    for (const auto& s : stages)
        for (const auto& a : s.artifacts) {
            const fs::path p = dir / a.path;
            if (!fs::is_regular_file(p)) problems.push_back(a.path + " missing");
            else if (sha256_file(p) != a.sha256) problems.push_back(a.path + " hash mismatch");
        }
    for (const auto& r : reports)
        if (!fs::exists(dir / r.path)) problems.push_back(r.path + " missing");
    return problems;
}

std::string run_directory(const RunConfig& config) {
    return (fs::path(config.output_dir) / (config.name + "-" + config.run_key().substr(0, 12))).string();
}

RunLock::RunLock(const std::string& run_dir) : path_((fs::path(run_dir) / "run.lock").string()) {
    fs::create_directories(run_dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            return;
        }
        if (errno != EEXIST) throw StageError("cannot create " + path_ + ": " + std::strerror(errno));
        long owner = 0;
        std::ifstream(path_) >> owner;
        if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM))
            throw StageError("run directory is locked by process " + std::to_string(owner));
        fs::remove(path_);  // stale
    }
    throw StageError("could not lock " + path_);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

RunManifest run_experiment(const RunConfig& config, const RunOptions& opts) {
    config.validate();
    std::string dir = run_directory(config);
    if (opts.fresh) {
        const std::string stamp = dir + "-" + utc_now(true);
        dir = stamp;
        for (int i = 2; fs::exists(dir); ++i) dir = stamp + "-" + std::to_string(i);
    }
    RunLock lock(dir);
    Runner runner(config, opts, dir);
    return runner.run();
}

std::vector<corpus::LabeledCase> RunData::partition(const std::string& which) const {
    if (!split) throw StageError("run has no split yet");
    if (which == "train") return corpus::select_cases(internal, split->train);
    if (which == "validation") return corpus::select_cases(internal, split->validation);
    if (which == "test") return corpus::select_cases(internal, split->test);
    throw ConfigError("unknown partition '" + which + "'");
}

RunData load_run_data(const RunConfig& config, const std::string& run_dir) {
    RunData d;
    if (config.internal) d.internal = load_dataset(*config.internal, config.schema).cases;
    if (config.external) d.external = load_dataset(*config.external, config.schema).cases;
    const fs::path sp = fs::path(run_dir) / "split.json";
    if (fs::exists(sp)) d.split = corpus::DatasetSplit::from_json(read_json(sp));
    return d;
}

std::vector<corpus::LabeledCase> read_unlabeled_cases(const RunConfig& config, const std::string& path) {
    DatasetSpec d;
    if (config.internal) d = *config.internal;
    d.records = path;
    const auto ingested = corpus::ingest_records(d.records, d.schema_map);
    return corpus::attach_labels(ingested.records, {}, config.schema, stop_list_for(d), false);
}

std::string model_directory(const std::string& run_dir, const ModelSpec& model) {
    return model.artifact.empty() ? (fs::path(run_dir) / "models" / model.name).string() : model.artifact;
}

std::unique_ptr<Predictor> load_predictor(const RunConfig& config, const std::string& run_dir, const ModelSpec& model,
                                          const std::vector<corpus::LabeledCase>& exemplar_pool) {
    const std::string dir = model_directory(run_dir, model);
    if (model.family != Family::Llm && !fs::is_directory(dir))
        throw StageError("no trained artifact for '" + model.name + "' at " + dir);
    std::unique_ptr<Predictor> p;
    switch (model.family) {
        case Family::ClassicSingle: p = std::make_unique<ClassicSinglePredictor>(config, model, dir); break;
        case Family::ClassicMulti: p = std::make_unique<ClassicMultiPredictor>(config, model, dir); break;
        case Family::Encoder: p = std::make_unique<EncoderPredictor>(config, model, dir); break;
        case Family::Llm:
            p = std::make_unique<LlmPredictor>(config, model, dir, exemplar_pool);
            for (const auto& c : exemplar_pool) p->training_ids.insert(c.id());
            break;
    }
    const fs::path ids = fs::path(dir) / "training_ids.json";
    if (fs::exists(ids))
        for (const auto& id : read_json(ids)) p->training_ids.insert(id.get<std::string>());
    return p;
}

std::string confine_path(const std::string& run_dir, const std::string& rel) {
    if (rel.empty()) throw ConfigError("empty output path");
    const fs::path root = fs::weakly_canonical(run_dir);
    const fs::path p(rel);
    const fs::path full = fs::weakly_canonical(p.is_absolute() ? p : root / p);
    const auto r = full.lexically_relative(root);
    if (r.empty() || *r.begin() == "..") throw ConfigError("output path " + rel + " lies outside the run directory " + run_dir);
    return full.string();
}

void write_predictions_csv(const std::string& path, const std::vector<std::string>& ids, const LabelMatrix& labels,
                           const ScoreMatrix* scores, const corpus::LabelSchema& schema) {
    if (labels.rows() != ids.size() || labels.cols() != schema.size())
        throw ShapeError("prediction matrix does not match case ids and schema");
    if (scores) require_same_shape(labels, *scores, "write_predictions_csv");
    std::ostringstream out;
    std::vector<std::string> header{"case_id"};
    for (const auto& c : schema.classes) header.push_back(c);
    if (scores)
        for (const auto& c : schema.classes) header.push_back("prob_" + c);
    write_csv_row(out, header);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<std::string> row{ids[i]};
        for (std::size_t c = 0; c < schema.size(); ++c) row.push_back(labels(i, c) ? "1" : "0");
        if (scores)
            for (std::size_t c = 0; c < schema.size(); ++c) row.push_back(format_double((*scores)(i, c)));
        write_csv_row(out, row);
    }
    write_file(path, out.str());
}

std::string render_run_report(const std::string& run_dir, char delimiter) {
    const auto m = RunManifest::load(run_dir);
    if (m.reports.empty()) throw StageError("run " + run_dir + " has no metric reports");
    std::vector<metrics::MetricReport> reports;
    for (const auto& tag : {std::string("internal_test"), std::string("external_test")})
        for (const auto& r : m.reports)
            if (r.dataset == tag) reports.push_back(metrics::report_from_json(read_json(fs::path(run_dir) / r.path)));
    for (const auto& r : m.reports)
        if (r.dataset != "internal_test" && r.dataset != "external_test")
            reports.push_back(metrics::report_from_json(read_json(fs::path(run_dir) / r.path)));
    return metrics::render_table(reports, delimiter);
}

}  // namespace odsurv::app
