#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/classic/search.hpp"
#include "odsurv/corpus/dataset.hpp"
#include "odsurv/corpus/schema.hpp"
#include "odsurv/corpus/split.hpp"
#include "odsurv/embeddings/embedder.hpp"
#include "odsurv/finetune/finetune.hpp"
#include "odsurv/llm/harness.hpp"
#include "odsurv/metrics/bootstrap.hpp"

namespace odsurv::app {

enum class Family { ClassicSingle, ClassicMulti, Encoder, Llm };

const char* to_string(Family f);
Family family_from_string(const std::string& s);

struct DatasetSpec {
    std::string records;  // delimited file
    std::string gold;     // optional; empty = labels required elsewhere
    corpus::SchemaMap schema_map = corpus::SchemaMap::identity();
    std::string stop_list;  // empty = built-in list
    bool require_gold = true;
};

struct LlmClientSpec {
    std::string kind = "http";  // http | mock_echo
    llm::HttpClientConfig http;
};

struct ModelSpec {
    std::string name;
    Family family = Family::Encoder;
    // Frozen artifact directory: no training, evaluation only.
    std::string artifact;
    bool evaluate_internal = true;
    bool evaluate_external = true;

    // classic_single / classic_multi
    embeddings::EmbedderConfig embedder;
    bool embedder_given = false;  // else taken from the artifact
    std::vector<classic::HyperGrid> grids;  // single: one per architecture; multi: first is used
    classic::SearchOptions search;
    double threshold = 0.5;

    // encoder
    finetune::FineTuneConfig finetune;
    std::size_t inference_batch_size = 32;

    // llm
    LlmClientSpec client;
    llm::PromptSpec prompt;
    std::optional<llm::SftConfig> sft;
    llm::GenerationOptions generation;
};

struct ExplainSpec {
    std::string model;  // encoder model name
    std::string target_class;
    std::size_t n_cases = 20;
    int steps = 50;
};

// Declarative experiment: one dataset (plus an optional external one), one
// split shared by every model, any number of models.
struct RunConfig {
    std::string name = "run";
    std::optional<DatasetSpec> internal;
    std::optional<DatasetSpec> external;
    corpus::LabelSchema schema = corpus::default_schema();
    corpus::SplitStrategy split_strategy = corpus::SplitStrategy::Random60_20_20;
    std::optional<std::string> split_target;
    std::uint64_t seed = 0;
    std::vector<ModelSpec> models;
    metrics::BootstrapOptions bootstrap;
    std::optional<ExplainSpec> explain;
    std::size_t workers = 1;
    std::string output_dir = "runs";
    std::string model_repo;  // encoder checkpoints by name

    // Exact bytes of the document the config came from.
    std::string source_text;

    void validate() const;
    const ModelSpec& model(const std::string& name) const;

    // Parses JSON, applies defaults and environment overrides (paths and
    // client endpoints only), and resolves relative paths against base_dir.
    static RunConfig parse(const std::string& text, const std::string& base_dir = "");
    static RunConfig load(const std::string& path);

    // Override of the top-level seed; rewrites source_text accordingly.
    void set_seed(std::uint64_t seed);

    // sha256 over the canonical config document and the input file hashes.
    std::string run_key() const;

    nlohmann::json document;  // parsed source, before overrides
    std::string base_dir;
    std::map<std::string, std::string> env_overrides;  // variable -> value applied
};

}  // namespace odsurv::app
