#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/embeddings/cui.hpp"
#include "odsurv/embeddings/vectors.hpp"
#include "odsurv/encoder/checkpoint.hpp"

namespace odsurv::embeddings {

enum class FilterStage { Extraction, Lookup };

struct EmbedderConfig {
    Backend backend = Backend::Static;
    std::string table_path;    // static and cui
    std::string lexicon_path;  // cui
    std::string encoder_id;    // contextual
    std::string semantic_filter = kDefaultSemanticFilter;
    FilterStage filter_stage = FilterStage::Extraction;
    std::size_t batch_size = 32;
    std::string pooling = "mean";

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static EmbedderConfig from_json(const nlohmann::json& j);
};

// Mean over final-layer token states (specials included) of each text.
// Over-length texts are tail-truncated and reported through `truncated`.
std::vector<DocumentVector> embed_contextual(const std::vector<std::string>& texts, const encoder::EncoderBundle& enc,
                                             std::size_t batch_size, std::size_t* truncated = nullptr);

// Loaded backend resources behind one embed() call.
class Embedder {
public:
    static Embedder load(const EmbedderConfig& cfg, const std::string& model_repo = "");

    std::vector<DocumentVector> embed(const std::vector<std::string>& texts) const;
    std::size_t dim() const;
    const EmbedderConfig& config() const noexcept { return cfg_; }
    // Counters from the last embed() call.
    std::size_t last_all_oov() const noexcept { return last_all_oov_; }
    std::size_t last_truncated() const noexcept { return last_truncated_; }

private:
    EmbedderConfig cfg_;
    std::shared_ptr<const VectorTable> table_;
    std::shared_ptr<const CuiLexicon> lexicon_;
    std::shared_ptr<const encoder::EncoderBundle> encoder_;
    mutable std::size_t last_all_oov_ = 0;
    mutable std::size_t last_truncated_ = 0;
};

}  // namespace odsurv::embeddings
