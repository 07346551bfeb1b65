#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/encoder/bert.hpp"
#include "odsurv/encoder/tokenizer.hpp"

namespace odsurv::encoder {

// An encoder plus its tokenizer and whatever run information travels with it
// (class names, schema hash, training config).
struct EncoderBundle {
    BertModel model;
    WordPieceTokenizer tokenizer;
    std::vector<std::string> classes;
    std::string schema_hash;
    nlohmann::ordered_json training;  // config snapshot, free-form
};

// Directory layout: config.json, vocab.txt, model.safetensors.
void save_encoder(const std::string& dir, const EncoderBundle& bundle);

// Loads a checkpoint directory. When `num_labels` is given and the stored
// head is missing or of another width, a fresh head is initialised from
// `head_seed`. A missing pooler is initialised the same way.
EncoderBundle load_encoder(const std::string& dir, std::optional<int> num_labels = std::nullopt,
                           std::uint64_t head_seed = 0);

// Resolves an encoder identifier: an existing directory is used as is,
// otherwise it is looked up under `repo_root` (default: $ODSURV_MODEL_REPO).
// Throws ConfigError when nothing loadable is found.
std::string resolve_encoder(const std::string& encoder_id, const std::string& repo_root = "");

}  // namespace odsurv::encoder
