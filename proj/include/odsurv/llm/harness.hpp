#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/common/matrix.hpp"
#include "odsurv/corpus/dataset.hpp"
#include "odsurv/corpus/schema.hpp"
#include "odsurv/metrics/report.hpp"

namespace odsurv::llm {

inline constexpr const char* kNoneToken = "NONE";
inline constexpr const char* kExampleDelimiter = "### Example";
inline constexpr const char* kAnswerFormat =
    "Answer with the names of every class that applies, exactly as listed and separated by commas, "
    "or NONE if no class applies.";

// Slots: {classes}, {format}, {examples}, {text}.
inline constexpr const char* kDefaultTemplate =
    "Identify the substance classes that contributed to the death described in the cause-of-death statement.\n"
    "Classes: {classes}\n"
    "{format}\n\n"
    "{examples}"
    "### Case\n"
    "Statement: {text}\n"
    "Answer:";

struct Exemplar {
    std::string case_id;
    std::string text;
    LabelVector labels;
};

struct ExemplarPool {
    std::vector<Exemplar> items;

    static ExemplarPool from_cases(std::span<const corpus::LabeledCase> cases);
};

struct PromptSpec {
    std::string instruction_template = kDefaultTemplate;
    int k = 0;
    std::uint64_t exemplar_seed = 0;
    bool balanced = false;  // cycle through classes when drawing exemplars

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static PromptSpec from_json(const nlohmann::json& j);
};

// Comma-separated class names in schema order, or NONE.
std::string render_answer(std::span<const std::uint8_t> labels, const corpus::LabelSchema& schema);

enum class ParseStatus { Ok, Repaired, Failed };
const char* to_string(ParseStatus s);

struct ParsedAnswer {
    LabelVector labels;
    ParseStatus status = ParseStatus::Failed;
    std::string raw;
    std::vector<std::string> ignored;  // items that named no class
};

ParsedAnswer parse_answer(const std::string& raw, const corpus::LabelSchema& schema);

// Exemplars for a run: uniform without replacement under exemplar_seed,
// skipping `exclude_id`. Throws ConfigError when the pool is too small.
std::vector<const Exemplar*> select_exemplars(const ExemplarPool& pool, const PromptSpec& spec,
                                              const corpus::LabelSchema& schema, const std::string& exclude_id = {});

std::string build_prompt(const std::string& case_text, const PromptSpec& spec, const std::vector<const Exemplar*>& shots,
                         const corpus::LabelSchema& schema);
std::string build_prompt(const std::string& case_text, const std::string& case_id, const PromptSpec& spec,
                         const ExemplarPool& pool, const corpus::LabelSchema& schema);

// Query statement of a prompt built by build_prompt (text after the last
// "Statement: " line), for clients that key on the case.
std::string prompt_query(const std::string& prompt);

struct GenerationRequest {
    std::string prompt;
    int max_tokens = 64;
    double temperature = 0.0;
};

struct SftExample {
    std::string prompt;
    std::string target;
};

// Text generation plus an optional supervised fine-tuning channel. The
// implementation talks to an inference server; weights never live here.
class ModelClient {
public:
    virtual ~ModelClient() = default;
    virtual std::string generate(const GenerationRequest& request) = 0;
    // Trains on one batch and returns the loss reported for it.
    virtual double train(std::span<const SftExample> batch);
    // Finishes training and returns a handle naming the fine-tuned model.
    virtual std::string finish_training();
    virtual std::string name() const = 0;
};

class MockClient : public ModelClient {
public:
    using GenerateFn = std::function<std::string(const GenerationRequest&)>;
    // Loss reported after `seen` examples have been consumed.
    using LossFn = std::function<double(std::size_t seen)>;

    explicit MockClient(GenerateFn generate, LossFn loss = {});

    std::string generate(const GenerationRequest& request) override;
    double train(std::span<const SftExample> batch) override;
    std::string finish_training() override;
    std::string name() const override { return "mock"; }

    std::size_t requests() const noexcept { return requests_; }

private:
    GenerateFn generate_;
    LossFn loss_;
    std::size_t seen_ = 0;
    std::atomic<std::size_t> requests_{0};
};

// Answers every prompt with the canonical rendering of the gold labels of
// its query statement; unknown statements get an empty reply.
std::unique_ptr<MockClient> make_echo_client(std::span<const corpus::LabeledCase> cases,
                                             const corpus::LabelSchema& schema);

struct HttpClientConfig {
    std::string base_url = "http://127.0.0.1:8080";
    std::string model;
    double timeout_seconds = 120;

    nlohmann::ordered_json to_json() const;
    static HttpClientConfig from_json(const nlohmann::json& j);
};

// JSON over HTTP: POST /generate {model, prompt, max_tokens, temperature} ->
// {text}; POST /sft/train {model, examples: [{prompt, target}]} -> {loss};
// POST /sft/finish {model} -> {model}.
class HttpClient : public ModelClient {
public:
    explicit HttpClient(HttpClientConfig cfg);

    std::string generate(const GenerationRequest& request) override;
    double train(std::span<const SftExample> batch) override;
    std::string finish_training() override;
    std::string name() const override;

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
    HttpClientConfig cfg_;
};

struct GenerationOptions {
    int max_tokens = 64;
    double temperature = 0.0;
    std::size_t max_in_flight = 4;
    int retries = 3;
    double backoff_seconds = 0.5;  // doubled per attempt
    std::string model_tag = "llm";
    std::string dataset_tag = "internal_test";
    metrics::BootstrapOptions bootstrap;
    // Scoring arbitrary records rather than a test partition: an input that is
    // also an exemplar is counted instead of rejected.
    bool allow_exemplar_overlap = false;
};

struct GenerationRecord {
    std::string case_id;
    std::string prompt_sha256;
    std::string raw;
    LabelVector parsed;
    ParseStatus status = ParseStatus::Failed;
    bool transport_failed = false;

    nlohmann::ordered_json to_json(const corpus::LabelSchema& schema) const;
};

struct ParseStats {
    std::size_t n = 0, ok = 0, repaired = 0, failed = 0, transport_failures = 0;
    std::size_t exemplar_overlap = 0;

    double ok_rate() const { return n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0; }
    double failure_rate() const { return n ? static_cast<double>(failed) / static_cast<double>(n) : 0.0; }
    nlohmann::ordered_json to_json() const;
};

struct GenerationEval {
    LabelMatrix predictions;
    std::vector<GenerationRecord> records;  // input order
    std::vector<std::string> exemplar_ids;
    metrics::MetricReport report;
    ParseStats stats;
};

// One request per case; failed parses and exhausted retries score as the
// all-negative vector. Throws ValidationError if an exemplar is a test case.
GenerationEval evaluate_generations(ModelClient& client, std::span<const corpus::LabeledCase> cases,
                                    const PromptSpec& spec, const ExemplarPool& pool,
                                    const corpus::LabelSchema& schema, const GenerationOptions& opts = {});

void write_generation_log(const std::string& path, const std::vector<GenerationRecord>& records,
                          const corpus::LabelSchema& schema);

struct SftConfig {
    double loss_threshold = 0.005;
    std::size_t max_examples = 2000;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    PromptSpec prompt;  // k is ignored: training prompts carry no exemplars

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static SftConfig from_json(const nlohmann::json& j);
};

struct SftResult {
    std::string model_handle;
    std::size_t examples_consumed = 0;
    double final_loss = 0.0;
    bool converged = false;
    std::vector<double> losses;  // one per batch
    std::string warning;

    nlohmann::ordered_json to_json() const;
};

// Feeds shuffled (prompt, canonical answer) pairs until the reported loss
// drops below the threshold or the example budget (or the split) runs out.
SftResult run_sft(ModelClient& client, std::span<const corpus::LabeledCase> train, const corpus::LabelSchema& schema,
                  const SftConfig& cfg);

}  // namespace odsurv::llm
