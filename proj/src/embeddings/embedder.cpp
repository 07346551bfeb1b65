#include "odsurv/embeddings/embedder.hpp"

#include <cctype>

#include "odsurv/common/error.hpp"
#include "odsurv/common/parallel.hpp"

namespace odsurv::embeddings {

void EmbedderConfig::validate() const {
    if (pooling != "mean") throw ConfigError("pooling must be 'mean'");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    switch (backend) {
        case Backend::Static:
            if (table_path.empty()) throw ConfigError("static embedder needs table_path");
            break;
        case Backend::Cui:
            if (table_path.empty() || lexicon_path.empty())
                throw ConfigError("cui embedder needs table_path and lexicon_path");
            break;
        case Backend::Contextual:
            if (encoder_id.empty()) throw ConfigError("contextual embedder needs encoder_id");
            break;
    }
}

nlohmann::ordered_json EmbedderConfig::to_json() const {
    nlohmann::ordered_json j;
    j["backend"] = to_string(backend);
    if (!table_path.empty()) j["table_path"] = table_path;
    if (!lexicon_path.empty()) j["lexicon_path"] = lexicon_path;
    if (!encoder_id.empty()) j["encoder_id"] = encoder_id;
    if (backend == Backend::Cui) {
        j["semantic_filter"] = semantic_filter;
        j["filter_stage"] = filter_stage == FilterStage::Extraction ? "extraction" : "lookup";
    }
    if (backend == Backend::Contextual) j["batch_size"] = batch_size;
    j["pooling"] = backend == Backend::Contextual ? "mean_final_layer_tokens" : pooling;
    return j;
}

EmbedderConfig EmbedderConfig::from_json(const nlohmann::json& j) {
    EmbedderConfig c;
    c.backend = backend_from_string(j.at("backend").get<std::string>());
    c.table_path = j.value("table_path", std::string{});
    c.lexicon_path = j.value("lexicon_path", std::string{});
    c.encoder_id = j.value("encoder_id", std::string{});
    c.semantic_filter = j.value("semantic_filter", std::string(kDefaultSemanticFilter));
    const auto stage = j.value("filter_stage", std::string("extraction"));
    if (stage == "extraction") c.filter_stage = FilterStage::Extraction;
    else if (stage == "lookup") c.filter_stage = FilterStage::Lookup;
    else throw ConfigError("filter_stage must be 'extraction' or 'lookup'");
    c.batch_size = j.value("batch_size", c.batch_size);
    const auto pooling = j.value("pooling", std::string("mean"));
    c.pooling = pooling == "mean_final_layer_tokens" ? "mean" : pooling;
    c.validate();
    return c;
}

std::vector<DocumentVector> embed_contextual(const std::vector<std::string>& texts, const encoder::EncoderBundle& enc,
                                             std::size_t batch_size, std::size_t* truncated) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    const auto& model = enc.model;
    const auto max_len = static_cast<std::size_t>(model.config().max_position_embeddings);
    std::vector<DocumentVector> out(texts.size());
    std::vector<char> was_truncated(texts.size(), 0);
    for (std::size_t start = 0; start < texts.size(); start += batch_size) {
        const std::size_t end = std::min(texts.size(), start + batch_size);
        parallel_for(end - start, [&](std::size_t k) {
            const std::size_t i = start + k;
            const auto e = enc.tokenizer.encode(texts[i], max_len);
            was_truncated[i] = e.truncated;
            const auto hidden = model.hidden_states(e.ids);
            DocumentVector v;
            v.backend = Backend::Contextual;
            v.values = hidden.colwise().mean().transpose().cast<double>();
            v.in_vocabulary = e.ids.size();
            out[i] = std::move(v);
        });
    }
    if (truncated) {
        *truncated = 0;
        for (char t : was_truncated) *truncated += t ? 1 : 0;
    }
    return out;
}

Embedder Embedder::load(const EmbedderConfig& cfg, const std::string& model_repo) {
    cfg.validate();
    Embedder e;
    e.cfg_ = cfg;
    if (cfg.backend == Backend::Static || cfg.backend == Backend::Cui)
        e.table_ = std::make_shared<const VectorTable>(load_vector_table(cfg.table_path));
    if (cfg.backend == Backend::Cui) e.lexicon_ = std::make_shared<const CuiLexicon>(load_cui_lexicon(cfg.lexicon_path));
    if (cfg.backend == Backend::Contextual)
        e.encoder_ = std::make_shared<const encoder::EncoderBundle>(
            encoder::load_encoder(encoder::resolve_encoder(cfg.encoder_id, model_repo)));
    return e;
}

std::size_t Embedder::dim() const {
    if (encoder_) return static_cast<std::size_t>(encoder_->model.config().hidden_size);
    return table_ ? table_->dim() : 0;
}

std::vector<DocumentVector> Embedder::embed(const std::vector<std::string>& texts) const {
    std::vector<DocumentVector> out;
    last_all_oov_ = 0;
    last_truncated_ = 0;
    if (cfg_.backend == Backend::Contextual) {
        out = embed_contextual(texts, *encoder_, cfg_.batch_size, &last_truncated_);
    } else {
        out.resize(texts.size());
        parallel_for(texts.size(), [&](std::size_t i) {
            if (cfg_.backend == Backend::Static) {
                out[i] = embed_mean_pooled(word_tokens(texts[i]), *table_);
                return;
            }
            if (cfg_.filter_stage == FilterStage::Extraction) {
                out[i] = cuis_to_vector(text_to_cuis(texts[i], *lexicon_, cfg_.semantic_filter), *table_);
                return;
            }
            auto cuis = text_to_cuis(texts[i], *lexicon_, "");
            std::string filter = cfg_.semantic_filter;
            for (auto& ch : filter) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            std::vector<std::string> kept;
            for (auto& c : cuis) {
                if (!filter.empty() && lexicon_->semantic_type(c) != filter) continue;
                kept.push_back(std::move(c));
            }
            out[i] = cuis_to_vector(kept, *table_);
        });
    }
    for (const auto& v : out) last_all_oov_ += v.all_oov ? 1 : 0;
    return out;
}

}  // namespace odsurv::embeddings
