#include "odsurv/llm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>

#include "odsurv/common/error.hpp"
#include "odsurv/common/hash.hpp"
#include "odsurv/common/parallel.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/corpus/record.hpp"

namespace odsurv::llm {

namespace {

constexpr const char* kStatementPrefix = "Statement: ";

std::string single_line(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c == '\n' || c == '\r') c = ' ';
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string strip_item(std::string_view s) {
    s = corpus::trim(s);
    while (!s.empty() && std::string_view("\"'`.*").find(s.front()) != std::string_view::npos) s.remove_prefix(1);
    while (!s.empty() && std::string_view("\"'`.*").find(s.back()) != std::string_view::npos) s.remove_suffix(1);
    return std::string(corpus::trim(s));
}

std::string join(const std::vector<std::string>& items, const char* sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

}  // namespace

ExemplarPool ExemplarPool::from_cases(std::span<const corpus::LabeledCase> cases) {
    ExemplarPool pool;
    for (const auto& c : cases) pool.items.push_back({c.id(), c.normalized_text, c.gold});
    return pool;
}

void PromptSpec::validate() const {
    if (k < 0) throw ConfigError("k must be non-negative");
    for (const char* slot : {"{classes}", "{format}", "{examples}", "{text}"})
        if (instruction_template.find(slot) == std::string::npos)
            throw ConfigError(std::string("prompt template lacks the ") + slot + " slot");
}

nlohmann::ordered_json PromptSpec::to_json() const {
    return {{"instruction_template", instruction_template},
            {"k", k},
            {"exemplar_seed", exemplar_seed},
            {"balanced", balanced}};
}

PromptSpec PromptSpec::from_json(const nlohmann::json& j) {
    PromptSpec s;
    for (const auto& [key, _] : j.items())
        if (key != "instruction_template" && key != "k" && key != "exemplar_seed" && key != "balanced")
            throw ConfigError("unknown prompt field '" + key + "'");
    s.instruction_template = j.value("instruction_template", s.instruction_template);
    s.k = j.value("k", s.k);
    s.exemplar_seed = j.value("exemplar_seed", s.exemplar_seed);
    s.balanced = j.value("balanced", s.balanced);
    s.validate();
    return s;
}

std::string render_answer(std::span<const std::uint8_t> labels, const corpus::LabelSchema& schema) {
    if (labels.size() != schema.size()) throw ShapeError("label width differs from the schema");
    std::vector<std::string> names;
    for (std::size_t c = 0; c < labels.size(); ++c)
        if (labels[c]) names.push_back(schema.classes[c]);
    return names.empty() ? kNoneToken : join(names, ", ");
}

const char* to_string(ParseStatus s) {
    switch (s) {
        case ParseStatus::Ok: return "ok";
        case ParseStatus::Repaired: return "repaired";
        case ParseStatus::Failed: return "failed";
    }
    return "failed";
}

ParsedAnswer parse_answer(const std::string& raw, const corpus::LabelSchema& schema) {
    ParsedAnswer out;
    out.raw = raw;
    out.labels.assign(schema.size(), 0);

    // The answer is the first non-empty line; anything after it is noise.
    std::string_view rest(raw), line;
    bool extra_lines = false;
    while (!rest.empty()) {
        const auto nl = rest.find('\n');
        const auto cur = corpus::trim(rest.substr(0, nl));
        rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
        if (cur.empty()) continue;
        if (line.empty()) line = cur;
        else {
            extra_lines = true;
            break;
        }
    }
    if (line.empty()) return out;

    bool saw_none = false, irregular = extra_lines;
    std::size_t matched = 0;
    std::size_t start = 0;
    while (start <= line.size()) {
        auto end = line.find(',', start);
        if (end == std::string_view::npos) end = line.size();
        const auto item = strip_item(line.substr(start, end - start));
        start = end + 1;
        if (item.empty()) {
            irregular = true;
            continue;
        }
        if (lower(item) == "none") {
            saw_none = true;
            continue;
        }
        if (const auto idx = schema.index_of(corpus::canonical_class_name(item))) {
            if (out.labels[*idx]) irregular = true;
            out.labels[*idx] = 1;
            ++matched;
        } else {
            out.ignored.push_back(item);
        }
    }

    if (matched == 0) {
        if (saw_none && out.ignored.empty()) out.status = irregular ? ParseStatus::Repaired : ParseStatus::Ok;
        else out.status = ParseStatus::Failed;
        return out;
    }
    out.status = (irregular || saw_none || !out.ignored.empty()) ? ParseStatus::Repaired : ParseStatus::Ok;
    return out;
}

std::vector<const Exemplar*> select_exemplars(const ExemplarPool& pool, const PromptSpec& spec,
                                              const corpus::LabelSchema& schema, const std::string& exclude_id) {
    spec.validate();
    std::vector<const Exemplar*> candidates;
    for (const auto& e : pool.items)
        if (e.case_id != exclude_id) candidates.push_back(&e);
    const auto k = static_cast<std::size_t>(spec.k);
    if (candidates.size() < k)
        throw ConfigError("exemplar pool has " + std::to_string(candidates.size()) + " usable cases, k = " +
                          std::to_string(k));
    Engine eng(stream_seed(spec.exemplar_seed, 0xE7E3));
    // Shuffle the full pool so selection does not depend on the excluded id.
    std::vector<std::size_t> order(pool.items.size());
    std::iota(order.begin(), order.end(), 0);
    portable_shuffle(order, eng);
    std::vector<const Exemplar*> shuffled;
    for (auto i : order)
        if (pool.items[i].case_id != exclude_id) shuffled.push_back(&pool.items[i]);

    if (!spec.balanced) return {shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k)};

    // One exemplar per class in turn (the last slot is "no class"), then fill.
    std::vector<const Exemplar*> out;
    std::vector<char> used(shuffled.size(), 0);
    const std::size_t slots = schema.size() + 1;
    bool progress = true;
    while (out.size() < k && progress) {
        progress = false;
        for (std::size_t slot = 0; slot < slots && out.size() < k; ++slot) {
            for (std::size_t i = 0; i < shuffled.size(); ++i) {
                if (used[i]) continue;
                const auto& labels = shuffled[i]->labels;
                const bool fits = slot < schema.size() ? labels.at(slot) != 0
                                                       : std::all_of(labels.begin(), labels.end(),
                                                                     [](std::uint8_t v) { return v == 0; });
                if (!fits) continue;
                used[i] = 1;
                out.push_back(shuffled[i]);
                progress = true;
                break;
            }
        }
    }
    for (std::size_t i = 0; i < shuffled.size() && out.size() < k; ++i)
        if (!used[i]) out.push_back(shuffled[i]);
    return out;
}

std::string build_prompt(const std::string& case_text, const PromptSpec& spec, const std::vector<const Exemplar*>& shots,
                         const corpus::LabelSchema& schema) {
    spec.validate();
    std::string examples;
    for (std::size_t i = 0; i < shots.size(); ++i) {
        examples += std::string(kExampleDelimiter) + " " + std::to_string(i + 1) + "\n";
        examples += kStatementPrefix + single_line(shots[i]->text) + "\n";
        examples += "Answer: " + render_answer(shots[i]->labels, schema) + "\n\n";
    }
    const std::vector<std::pair<std::string, std::string>> slots{{"{classes}", join(schema.classes, ", ")},
                                                                 {"{format}", kAnswerFormat},
                                                                 {"{examples}", examples},
                                                                 {"{text}", single_line(case_text)}};
    // Single left-to-right pass so slot-like text inside values stays literal.
    const auto& tpl = spec.instruction_template;
    std::string out;
    std::size_t pos = 0;
    while (pos < tpl.size()) {
        bool replaced = false;
        if (tpl[pos] == '{') {
            for (const auto& [slot, value] : slots) {
                if (tpl.compare(pos, slot.size(), slot) == 0) {
                    out += value;
                    pos += slot.size();
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) out += tpl[pos++];
    }
    return out;
}

std::string build_prompt(const std::string& case_text, const std::string& case_id, const PromptSpec& spec,
                         const ExemplarPool& pool, const corpus::LabelSchema& schema) {
    return build_prompt(case_text, spec, select_exemplars(pool, spec, schema, case_id), schema);
}

std::string prompt_query(const std::string& prompt) {
    const auto at = prompt.rfind(kStatementPrefix);
    if (at == std::string::npos) return {};
    const auto begin = at + std::string_view(kStatementPrefix).size();
    const auto end = prompt.find('\n', begin);
    return prompt.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
}

double ModelClient::train(std::span<const SftExample>) {
    throw ConfigError("client '" + name() + "' has no fine-tuning interface");
}

std::string ModelClient::finish_training() {
    throw ConfigError("client '" + name() + "' has no fine-tuning interface");
}

MockClient::MockClient(GenerateFn generate, LossFn loss) : generate_(std::move(generate)), loss_(std::move(loss)) {}

std::string MockClient::generate(const GenerationRequest& request) {
    ++requests_;
    return generate_(request);
}

double MockClient::train(std::span<const SftExample> batch) {
    if (!loss_) return ModelClient::train(batch);
    seen_ += batch.size();
    return loss_(seen_);
}

std::string MockClient::finish_training() {
    if (!loss_) return ModelClient::finish_training();
    return "mock-sft-" + std::to_string(seen_);
}

std::unique_ptr<MockClient> make_echo_client(std::span<const corpus::LabeledCase> cases,
                                             const corpus::LabelSchema& schema) {
    auto answers = std::make_shared<std::unordered_map<std::string, std::string>>();
    for (const auto& c : cases) (*answers)[single_line(c.normalized_text)] = render_answer(c.gold, schema);
    return std::make_unique<MockClient>([answers](const GenerationRequest& r) {
        const auto it = answers->find(prompt_query(r.prompt));
        return it == answers->end() ? std::string{} : it->second;
    });
}

nlohmann::ordered_json GenerationRecord::to_json(const corpus::LabelSchema& schema) const {
    nlohmann::ordered_json j;
    j["case_id"] = case_id;
    j["prompt_sha256"] = prompt_sha256;
    j["raw"] = raw;
    j["parsed"] = nlohmann::ordered_json::array();
    for (auto v : parsed) j["parsed"].push_back(static_cast<int>(v));
    j["answer"] = render_answer(parsed, schema);
    j["status"] = to_string(status);
    if (transport_failed) j["transport_failed"] = true;
    return j;
}

nlohmann::ordered_json ParseStats::to_json() const {
    return {{"n", n},
            {"ok", ok},
            {"repaired", repaired},
            {"failed", failed},
            {"transport_failures", transport_failures},
            {"exemplar_overlap", exemplar_overlap},
            {"ok_rate", ok_rate()},
            {"failure_rate", failure_rate()}};
}

GenerationEval evaluate_generations(ModelClient& client, std::span<const corpus::LabeledCase> cases,
                                    const PromptSpec& spec, const ExemplarPool& pool,
                                    const corpus::LabelSchema& schema, const GenerationOptions& opts) {
    const auto shots = select_exemplars(pool, spec, schema);
    std::set<std::string> test_ids;
    for (const auto& c : cases) test_ids.insert(c.id());
    GenerationEval out;
    for (const auto* e : shots) {
        if (test_ids.count(e->case_id)) {
            if (!opts.allow_exemplar_overlap) throw ValidationError("exemplar " + e->case_id + " is also a test case");
            ++out.stats.exemplar_overlap;
        }
        out.exemplar_ids.push_back(e->case_id);
    }

    const std::size_t K = schema.size();
    out.records.resize(cases.size());
    parallel_for(
        cases.size(),
        [&](std::size_t i) {
            auto& rec = out.records[i];
            rec.case_id = cases[i].id();
            GenerationRequest req;
            req.prompt = build_prompt(cases[i].normalized_text, spec, shots, schema);
            req.max_tokens = opts.max_tokens;
            req.temperature = opts.temperature;
            rec.prompt_sha256 = sha256_hex(req.prompt);
            bool got = false;
            for (int attempt = 0; attempt <= opts.retries && !got; ++attempt) {
                if (attempt > 0 && opts.backoff_seconds > 0)
                    std::this_thread::sleep_for(
                        std::chrono::duration<double>(opts.backoff_seconds * std::pow(2.0, attempt - 1)));
                try {
                    rec.raw = client.generate(req);
                    got = true;
                } catch (const TransportError&) {
                }
            }
            if (!got) {
                rec.transport_failed = true;
                rec.parsed.assign(K, 0);
                rec.status = ParseStatus::Failed;
                return;
            }
            auto parsed = parse_answer(rec.raw, schema);
            rec.parsed = std::move(parsed.labels);
            rec.status = parsed.status;
        },
        std::max<std::size_t>(1, opts.max_in_flight));

    out.predictions = LabelMatrix(0, K);
    LabelMatrix gold(0, K);
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& rec = out.records[i];
        out.predictions.append_row(rec.parsed);
        gold.append_row(cases[i].gold);
        ++out.stats.n;
        switch (rec.status) {
            case ParseStatus::Ok: ++out.stats.ok; break;
            case ParseStatus::Repaired: ++out.stats.repaired; break;
            case ParseStatus::Failed: ++out.stats.failed; break;
        }
        if (rec.transport_failed) ++out.stats.transport_failures;
    }
    out.report = metrics::evaluate(out.predictions, gold, nullptr, schema.classes, opts.model_tag, opts.dataset_tag,
                                   opts.bootstrap);
    return out;
}

void write_generation_log(const std::string& path, const std::vector<GenerationRecord>& records,
                          const corpus::LabelSchema& schema) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write " + path);
    for (const auto& r : records) out << r.to_json(schema).dump() << '\n';
    if (!out) throw IngestError("write failed for " + path);
}

void SftConfig::validate() const {
    if (!(loss_threshold > 0)) throw ConfigError("loss_threshold must be positive");
    if (max_examples == 0) throw ConfigError("max_examples must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    prompt.validate();
}

nlohmann::ordered_json SftConfig::to_json() const {
    return {{"loss_threshold", loss_threshold},
            {"max_examples", max_examples},
            {"batch_size", batch_size},
            {"seed", seed},
            {"prompt", prompt.to_json()}};
}

SftConfig SftConfig::from_json(const nlohmann::json& j) {
    SftConfig c;
    for (const auto& [key, _] : j.items())
        if (key != "loss_threshold" && key != "max_examples" && key != "batch_size" && key != "seed" &&
            key != "prompt")
            throw ConfigError("unknown sft field '" + key + "'");
    c.loss_threshold = j.value("loss_threshold", c.loss_threshold);
    c.max_examples = j.value("max_examples", c.max_examples);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("prompt")) c.prompt = PromptSpec::from_json(j.at("prompt"));
    c.validate();
    return c;
}

nlohmann::ordered_json SftResult::to_json() const {
    nlohmann::ordered_json j{{"model_handle", model_handle},
                             {"examples_consumed", examples_consumed},
                             {"final_loss", final_loss},
                             {"converged", converged},
                             {"batches", losses.size()}};
    if (!warning.empty()) j["warning"] = warning;
    return j;
}

SftResult run_sft(ModelClient& client, std::span<const corpus::LabeledCase> train, const corpus::LabelSchema& schema,
                  const SftConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw TrainingError("empty training split");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Engine eng(stream_seed(cfg.seed, 0x5F7));
    portable_shuffle(order, eng);
    const std::size_t budget = std::min(cfg.max_examples, train.size());
    auto spec = cfg.prompt;
    spec.k = 0;

    SftResult r;
    std::vector<SftExample> batch;
    for (std::size_t start = 0; start < budget && !r.converged; start += cfg.batch_size) {
        batch.clear();
        for (std::size_t i = start; i < std::min(budget, start + cfg.batch_size); ++i) {
            const auto& c = train[order[i]];
            batch.push_back({build_prompt(c.normalized_text, spec, {}, schema), render_answer(c.gold, schema)});
        }
        r.final_loss = client.train(batch);
        r.losses.push_back(r.final_loss);
        r.examples_consumed += batch.size();
        r.converged = r.final_loss < cfg.loss_threshold;
    }
    if (!r.converged)
        r.warning = "training loss " + std::to_string(r.final_loss) + " stayed at or above " +
                    std::to_string(cfg.loss_threshold) + " after " + std::to_string(r.examples_consumed) + " examples";
    r.model_handle = client.finish_training();
    return r;
}

HttpClientConfig HttpClientConfig::from_json(const nlohmann::json& j) {
    HttpClientConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model = j.value("model", c.model);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    if (c.base_url.rfind("http://", 0) != 0) throw ConfigError("base_url must start with http://");
    if (!(c.timeout_seconds > 0)) throw ConfigError("timeout_seconds must be positive");
    return c;
}

nlohmann::ordered_json HttpClientConfig::to_json() const {
    return {{"base_url", base_url}, {"model", model}, {"timeout_seconds", timeout_seconds}};
}

}  // namespace odsurv::llm
