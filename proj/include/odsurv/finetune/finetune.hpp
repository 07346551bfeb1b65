#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/common/matrix.hpp"
#include "odsurv/corpus/dataset.hpp"
#include "odsurv/corpus/schema.hpp"
#include "odsurv/encoder/checkpoint.hpp"

namespace odsurv::finetune {

// Shape of an encoder built from scratch when encoder_id is "scratch"; the
// vocabulary then comes from the training texts.
struct ScratchEncoder {
    int hidden_size = 64;
    int num_hidden_layers = 2;
    int num_attention_heads = 4;
    int intermediate_size = 128;
    int max_position_embeddings = 128;
    std::size_t vocab_size = 4000;
    std::string classifier_pooling = "mean";
};

struct FineTuneConfig {
    std::string encoder_id;
    std::size_t batch_size = 32;
    double weight_decay = 0.01;
    double learning_rate = 2e-5;
    int epochs = 5;
    std::string selection_metric = "validation_macro_f1";
    double threshold = 0.5;
    std::uint64_t seed = 0;
    double max_grad_norm = 1.0;  // 0 disables clipping
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_epsilon = 1e-8;
    std::size_t max_length = 0;  // 0 = encoder limit
    bool repair_implications = false;
    ScratchEncoder scratch;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static FineTuneConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;  // mean element-wise binary cross-entropy
    double validation_macro_f1 = 0.0;
    double seconds = 0.0;
};

struct EncoderClassifier {
    encoder::EncoderBundle bundle;  // classes and schema hash live here
    double threshold = 0.5;
    std::size_t max_length = 0;

    std::size_t n_classes() const { return bundle.classes.size(); }
    std::size_t effective_max_length() const;
};

struct FineTuneResult {
    EncoderClassifier model;
    std::vector<EpochLog> epochs;
    int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Sigmoid heads trained with binary cross-entropy averaged over batch and
// classes, AdamW with linear decay, best epoch kept by validation macro F1.
FineTuneResult finetune_encoder(const std::vector<corpus::LabeledCase>& train,
                                const std::vector<corpus::LabeledCase>& validation, const corpus::LabelSchema& schema,
                                const FineTuneConfig& config, const std::string& model_repo = "",
                                const EpochCallback& on_epoch = {});

struct InferenceStats {
    std::vector<double> batch_seconds;
    double total_seconds = 0.0;
    std::size_t n_texts = 0;
    std::size_t truncated = 0;

    double texts_per_second() const { return total_seconds > 0 ? static_cast<double>(n_texts) / total_seconds : 0.0; }
    nlohmann::ordered_json to_json() const;
};

// N x classes sigmoid outputs, rows in input order.
ScoreMatrix predict_probabilities(const EncoderClassifier& model, const std::vector<std::string>& texts,
                                  std::size_t batch_size, InferenceStats* stats = nullptr, std::size_t workers = 1);

// Bit is 1 iff probability >= threshold.
LabelMatrix threshold_labels(const ScoreMatrix& probs, double threshold);

// Sets every implied parent when a child is positive (transitively).
void repair_implications(LabelMatrix& labels, const corpus::LabelSchema& schema);

void save_classifier(const std::string& dir, const EncoderClassifier& model);
EncoderClassifier load_classifier(const std::string& dir);

}  // namespace odsurv::finetune
