#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/app/config.hpp"
#include "odsurv/common/error.hpp"
#include "odsurv/common/matrix.hpp"

namespace odsurv::app {

const char* toolkit_version();

// Dataset tag for scoring arbitrary records outside any partition.
extern const char* const kPredictTag;

struct ArtifactRecord {
    std::string path;  // relative to the run directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct StageRecord {
    std::string name;    // ingest:internal, split, train:<model>, evaluate:<model>:<dataset>, explain:<model>
    std::string status;  // completed | reused | failed
    std::string started;
    std::string finished;
    double seconds = 0.0;
    std::string error;
    std::string error_kind;
    std::vector<ArtifactRecord> artifacts;
};

struct ReportRef {
    std::string model;
    std::string dataset;  // internal_test | external_test
    std::string path;
    std::string split_fingerprint;
};

struct RunManifest {
    std::string run_dir;
    std::string run_key;
    std::string config_hash;  // sha256 of config.json bytes
    std::string config_base_dir;  // relative paths in config.json resolve here
    std::string toolkit_version;
    std::string created;
    std::string updated;
    std::string status;  // completed | failed | partial
    std::vector<StageRecord> stages;
    std::vector<ReportRef> reports;
    std::map<std::string, std::string> env_overrides;

    const StageRecord* stage(const std::string& name) const;
    const StageRecord* failed_stage() const;
    bool all_reused() const;

    nlohmann::ordered_json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    static RunManifest load(const std::string& run_dir);

    // Problems found re-hashing listed artifacts; empty when all verify.
    std::vector<std::string> verify() const;
};

enum class Until { Ingest, Split, Train, Evaluate };

struct RunOptions {
    Until until = Until::Evaluate;
    std::set<std::string> models;  // empty = every model
    bool fresh = false;            // new timestamped subrun
    bool explain = true;
};

// Run directory of a config: <output_dir>/<name>-<key prefix>.
std::string run_directory(const RunConfig& config);

// Executes the stages in order, reusing any stage whose recorded artifacts
// still verify. A failing stage is recorded and stops the run; the returned
// manifest then has status "failed".
RunManifest run_experiment(const RunConfig& config, const RunOptions& opts = {});

// Exclusive ownership of a run directory for the lifetime of the object.
// A lock left by a dead process is taken over.
class RunLock {
public:
    explicit RunLock(const std::string& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::string path_;
};

// Inputs of a run rebuilt from its config and split.json.
struct RunData {
    std::vector<corpus::LabeledCase> internal;
    std::vector<corpus::LabeledCase> external;
    std::optional<corpus::DatasetSplit> split;

    std::vector<corpus::LabeledCase> partition(const std::string& which) const;  // train | validation | test
};

RunData load_run_data(const RunConfig& config, const std::string& run_dir);

// Cases of a delimited file without gold labels (all-zero vectors), read with
// the internal dataset's column mapping and stop list.
std::vector<corpus::LabeledCase> read_unlabeled_cases(const RunConfig& config, const std::string& path);

// Loaded, ready-to-predict model of one config entry.
class Predictor {
public:
    virtual ~Predictor() = default;
    struct Output {
        LabelMatrix labels;
        std::optional<ScoreMatrix> scores;
        nlohmann::ordered_json diagnostics;  // throughput, parse statistics
    };
    virtual Output predict(const std::vector<corpus::LabeledCase>& cases, const std::string& dataset_tag) = 0;
    // Case ids the model saw while training or selecting; empty when unknown.
    std::set<std::string> training_ids;
};

// Trained artifact of `model` from its train stage, or its frozen artifact.
// LLM models draw exemplars from `exemplar_pool`.
std::unique_ptr<Predictor> load_predictor(const RunConfig& config, const std::string& run_dir, const ModelSpec& model,
                                          const std::vector<corpus::LabeledCase>& exemplar_pool = {});

// Directory holding the model's artifact: the frozen one or models/<name>.
std::string model_directory(const std::string& run_dir, const ModelSpec& model);

// Resolves `rel` inside `run_dir`; absolute paths and escapes are rejected.
std::string confine_path(const std::string& run_dir, const std::string& rel);

// case_id, one 0/1 column per class, then prob_<class> columns when scores exist.
void write_predictions_csv(const std::string& path, const std::vector<std::string>& case_ids, const LabelMatrix& labels,
                           const ScoreMatrix* scores, const corpus::LabelSchema& schema);

// Per dataset tag, a metric x model grid of the run's reports.
std::string render_run_report(const std::string& run_dir, char delimiter = '\t');

}  // namespace odsurv::app
