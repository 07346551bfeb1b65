#include "odsurv/app/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "odsurv/common/error.hpp"
#include "odsurv/common/hash.hpp"

namespace odsurv::app {

namespace fs = std::filesystem;

const char* to_string(Family f) {
    switch (f) {
        case Family::ClassicSingle: return "classic_single";
        case Family::ClassicMulti: return "classic_multi";
        case Family::Encoder: return "encoder";
        case Family::Llm: return "llm";
    }
    return "encoder";
}

Family family_from_string(const std::string& s) {
    if (s == "classic_single") return Family::ClassicSingle;
    if (s == "classic_multi") return Family::ClassicMulti;
    if (s == "encoder") return Family::Encoder;
    if (s == "llm") return Family::Llm;
    throw ConfigError("unknown model family '" + s + "'");
}

namespace {

using Json = nlohmann::json;

void allow_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items())
        if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

std::string resolve(const std::string& path, const std::string& base) {
    if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base) / path).lexically_normal().string();
}

DatasetSpec parse_dataset(const Json& j, const std::string& base, const std::string& where) {
    allow_keys(j, {"records", "gold", "schema_map", "stop_list", "require_gold"}, where);
    DatasetSpec d;
    d.records = resolve(j.at("records").get<std::string>(), base);
    d.gold = resolve(j.value("gold", std::string{}), base);
    if (j.contains("schema_map")) d.schema_map = corpus::SchemaMap::from_json(j.at("schema_map"));
    d.stop_list = resolve(j.value("stop_list", std::string{}), base);
    d.require_gold = j.value("require_gold", true);
    return d;
}

classic::SearchOptions parse_search(const Json& j, std::size_t workers) {
    allow_keys(j, {"folds", "balance_classes", "workers"}, "search");
    classic::SearchOptions s;
    s.folds = j.value("folds", s.folds);
    s.balance_classes = j.value("balance_classes", s.balance_classes);
    s.workers = j.value("workers", workers);
    if (s.folds < 2) throw ConfigError("search.folds must be at least 2");
    return s;
}

ModelSpec parse_model(const Json& j, const RunConfig& run, const std::string& base) {
    allow_keys(j,
               {"name", "family", "artifact", "evaluate", "embedder", "grids", "grid", "search", "threshold",
                "finetune", "inference_batch_size", "client", "prompt", "sft", "generation"},
               "model");
    ModelSpec m;
    m.family = family_from_string(j.at("family").get<std::string>());
    m.name = j.value("name", std::string(to_string(m.family)));
    m.artifact = resolve(j.value("artifact", std::string{}), base);
    if (j.contains("evaluate")) {
        const auto on = j.at("evaluate").get<std::vector<std::string>>();
        m.evaluate_internal = m.evaluate_external = false;
        for (const auto& d : on) {
            if (d == "internal") m.evaluate_internal = true;
            else if (d == "external") m.evaluate_external = true;
            else throw ConfigError("model '" + m.name + "': evaluate entries are 'internal' or 'external'");
        }
    }
    m.threshold = j.value("threshold", 0.5);
    if (!(m.threshold > 0 && m.threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");

    const bool classic = m.family == Family::ClassicSingle || m.family == Family::ClassicMulti;
    if (classic) {
        if (j.contains("embedder")) {
            auto e = j.at("embedder");
            for (const char* key : {"table_path", "lexicon_path"})
                if (e.contains(key)) e[key] = resolve(e.at(key).get<std::string>(), base);
            m.embedder = embeddings::EmbedderConfig::from_json(e);
            m.embedder_given = true;
        } else if (m.artifact.empty()) {
            throw ConfigError("model '" + m.name + "' needs an embedder");
        }
        if (j.contains("grids"))
            for (const auto& g : j.at("grids")) m.grids.push_back(classic::HyperGrid::from_json(g));
        if (j.contains("grid")) m.grids.push_back(classic::HyperGrid::from_json(j.at("grid")));
        if (m.grids.empty())
            m.grids = m.family == Family::ClassicSingle ? classic::default_grids()
                                                       : std::vector{classic::default_multilabel_grid(
                                                             classic::Architecture::RandomForest)};
        m.search = parse_search(j.value("search", Json::object()), run.workers);
    }
    if (m.family == Family::Encoder) {
        Json ft = j.value("finetune", Json::object());
        if (!ft.contains("seed")) ft["seed"] = run.seed;
        if (!ft.contains("encoder_id")) ft["encoder_id"] = "scratch";
        m.finetune = finetune::FineTuneConfig::from_json(ft);
        if (j.contains("threshold")) m.finetune.threshold = m.threshold;
        m.inference_batch_size = j.value("inference_batch_size", m.inference_batch_size);
        if (m.inference_batch_size == 0) throw ConfigError("inference_batch_size must be positive");
    }
    if (m.family == Family::Llm) {
        const Json c = j.value("client", Json{{"kind", "http"}});
        allow_keys(c, {"kind", "base_url", "model", "timeout_seconds"}, "client");
        m.client.kind = c.value("kind", std::string("http"));
        if (m.client.kind != "http" && m.client.kind != "mock_echo")
            throw ConfigError("client kind must be 'http' or 'mock_echo'");
        if (m.client.kind == "http") {
            Json h = c;
            h.erase("kind");
            m.client.http = llm::HttpClientConfig::from_json(h);
        }
        Json p = j.value("prompt", Json::object());
        if (!p.contains("exemplar_seed")) p["exemplar_seed"] = run.seed;
        m.prompt = llm::PromptSpec::from_json(p);
        if (j.contains("sft")) {
            Json s = j.at("sft");
            if (!s.contains("seed")) s["seed"] = run.seed;
            m.sft = llm::SftConfig::from_json(s);
        }
        const Json g = j.value("generation", Json::object());
        allow_keys(g, {"max_tokens", "temperature", "max_in_flight", "retries", "backoff_seconds"}, "generation");
        m.generation.max_tokens = g.value("max_tokens", m.generation.max_tokens);
        m.generation.temperature = g.value("temperature", m.generation.temperature);
        m.generation.max_in_flight = g.value("max_in_flight", m.generation.max_in_flight);
        m.generation.retries = g.value("retries", m.generation.retries);
        m.generation.backoff_seconds = g.value("backoff_seconds", m.generation.backoff_seconds);
    }
    return m;
}

}  // namespace

void RunConfig::validate() const {
    if (name.empty() || name.find_first_of("/\\") != std::string::npos) throw ConfigError("run name must be a plain file name");
    if (models.empty()) throw ConfigError("config lists no models");
    std::set<std::string> names;
    bool needs_internal = false;
    for (const auto& m : models) {
        if (m.name.empty() || m.name.find_first_of("/\\.") != std::string::npos)
            throw ConfigError("model name '" + m.name + "' must be a plain identifier");
        if (!names.insert(m.name).second) throw ConfigError("duplicate model name '" + m.name + "'");
        needs_internal |= m.artifact.empty() || m.evaluate_internal;
        if (!m.evaluate_internal && !(m.evaluate_external && external))
            throw ConfigError("model '" + m.name + "' is evaluated on no dataset");
    }
    if (needs_internal && !internal) throw ConfigError("config needs a 'data' section");
    if (split_strategy == corpus::SplitStrategy::Stratified80_20 && !split_target)
        throw ConfigError("stratified_80_20 needs split.target_class");
    if (split_strategy == corpus::SplitStrategy::Random60_20_20 && split_target)
        throw ConfigError("random_60_20_20 takes no target_class");
    if (explain) {
        const auto& m = model(explain->model);
        if (m.family != Family::Encoder) throw ConfigError("explain.model must be an encoder model");
        if (!schema.index_of(explain->target_class))
            throw ConfigError("explain.class '" + explain->target_class + "' is not a schema class");
    }
    if (workers == 0) throw ConfigError("workers must be positive");
}

const ModelSpec& RunConfig::model(const std::string& n) const {
    for (const auto& m : models)
        if (m.name == n) return m;
    throw ConfigError("no model named '" + n + "' in the config");
}

RunConfig RunConfig::parse(const std::string& text, const std::string& base) {
    RunConfig c;
    try {
        c.document = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    c.source_text = text;
    c.base_dir = base;
    const Json& j = c.document;
    allow_keys(j,
               {"name", "seed", "workers", "output_dir", "model_repo", "schema", "data", "external", "split",
                "bootstrap", "models", "explain"},
               "config");
    try {
        c.name = j.value("name", c.name);
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
        c.output_dir = resolve(j.value("output_dir", c.output_dir), base);
        c.model_repo = resolve(j.value("model_repo", std::string{}), base);
        if (j.contains("schema")) c.schema = corpus::schema_from_json(j.at("schema"));
        if (j.contains("data")) c.internal = parse_dataset(j.at("data"), base, "data");
        if (j.contains("external")) c.external = parse_dataset(j.at("external"), base, "external");
        if (j.contains("split")) {
            const auto& s = j.at("split");
            allow_keys(s, {"strategy", "target_class"}, "split");
            c.split_strategy = corpus::split_strategy_from_string(s.value("strategy", std::string("random_60_20_20")));
            if (s.contains("target_class") && !s.at("target_class").is_null())
                c.split_target = s.at("target_class").get<std::string>();
        }
        c.bootstrap.seed = c.seed;
        if (j.contains("bootstrap")) {
            const auto& b = j.at("bootstrap");
            allow_keys(b, {"n", "level", "seed"}, "bootstrap");
            c.bootstrap.n = b.value("n", c.bootstrap.n);
            c.bootstrap.level = b.value("level", c.bootstrap.level);
            c.bootstrap.seed = b.value("seed", c.bootstrap.seed);
        }
        c.bootstrap.workers = c.workers;
        for (const auto& m : j.at("models")) c.models.push_back(parse_model(m, c, base));
        if (j.contains("explain")) {
            const auto& e = j.at("explain");
            allow_keys(e, {"model", "class", "n_cases", "steps"}, "explain");
            ExplainSpec x;
            x.model = e.at("model").get<std::string>();
            x.target_class = e.at("class").get<std::string>();
            x.n_cases = e.value("n_cases", x.n_cases);
            x.steps = e.value("steps", x.steps);
            c.explain = x;
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    // Environment overrides: paths and client endpoints only.
    if (const char* v = std::getenv("ODSURV_OUTPUT_DIR"); v && *v) {
        c.output_dir = v;
        c.env_overrides["ODSURV_OUTPUT_DIR"] = v;
    }
    if (const char* v = std::getenv("ODSURV_MODEL_REPO"); v && *v) {
        c.model_repo = v;
        c.env_overrides["ODSURV_MODEL_REPO"] = v;
    }
    if (const char* v = std::getenv("ODSURV_LLM_ENDPOINT"); v && *v) {
        for (auto& m : c.models)
            if (m.family == Family::Llm && m.client.kind == "http") m.client.http.base_url = v;
        c.env_overrides["ODSURV_LLM_ENDPOINT"] = v;
    }
    for (auto& m : c.models) {
        m.generation.bootstrap = c.bootstrap;
        m.generation.model_tag = m.name;
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), fs::absolute(path).parent_path().string());
}

void RunConfig::set_seed(std::uint64_t s) {
    auto doc = document;
    doc["seed"] = s;
    *this = parse(doc.dump(2) + "\n", base_dir);
}

std::string RunConfig::run_key() const {
    std::string material = document.dump();
    for (const auto* d : {&internal, &external}) {
        if (!*d) continue;
        for (const auto& p : {(*d)->records, (*d)->gold, (*d)->stop_list}) {
            if (p.empty()) continue;
            if (!fs::exists(p)) throw IngestError("input file not found: " + p);
            material += "\n" + p + "=" + sha256_file(p);
        }
    }
    return sha256_hex(material);
}

}  // namespace odsurv::app
