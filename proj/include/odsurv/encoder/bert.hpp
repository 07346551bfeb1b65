#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace odsurv::encoder {

using Scalar = double;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Hyperparameters with the field names of a BERT config.json.
struct BertConfig {
    int vocab_size = 0;
    int hidden_size = 768;
    int num_hidden_layers = 12;
    int num_attention_heads = 12;
    int intermediate_size = 3072;
    int max_position_embeddings = 512;
    int type_vocab_size = 2;
    double layer_norm_eps = 1e-12;
    int pad_token_id = 0;
    int num_labels = 0;  // 0 = encoder only, no classification head
    // Head input: "cls" is the tanh pooler over the first token, "mean" the
    // average of all final-layer token states (pooler unused).
    std::string classifier_pooling = "cls";

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static BertConfig from_json(const nlohmann::json& j);
};

struct Linear {
    Mat weight;  // out x in
    Mat bias;    // 1 x out
};

struct LayerNorm {
    Mat gamma;  // 1 x H
    Mat beta;
};

struct EncoderLayer {
    Linear query, key, value, attention_output;
    LayerNorm attention_norm;
    Linear intermediate, output;
    LayerNorm output_norm;
};

// Parameter set; also used, zero-filled, as the gradient accumulator.
struct BertWeights {
    Mat word_embeddings;      // V x H
    Mat position_embeddings;  // P x H
    Mat token_type_embeddings;
    LayerNorm embedding_norm;
    std::vector<EncoderLayer> layers;
    Linear pooler;
    Linear classifier;  // num_labels x H, empty when num_labels == 0

    // Visits every tensor with its checkpoint name, in a fixed order.
    void visit(const std::function<void(const std::string&, Mat&)>& fn);
    void visit(const std::function<void(const std::string&, const Mat&)>& fn) const;

    BertWeights zeros_like() const;
    void set_zero();
    bool all_finite() const;
};

BertWeights init_weights(const BertConfig& cfg, std::uint64_t seed);
Linear init_linear(int out, int in, std::uint64_t seed);

struct LayerNormCache {
    Mat xhat;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

struct LayerCache {
    Mat input;
    Mat q, k, v;
    std::vector<Mat> probs;  // per head, T x T
    Mat context;
    LayerNormCache norm1;
    Mat h1;
    Mat pre_act;  // intermediate pre-GELU
    Mat act;
    LayerNormCache norm2;
};

// Activations of one sequence. Kept so backward() can reuse them.
struct ForwardPass {
    std::vector<int> ids;
    Mat word_rows;  // T x H word-embedding input actually used
    LayerNormCache embedding_norm;
    std::vector<LayerCache> layers;
    Mat hidden;  // final layer, T x H
    RowVec pooled;
    RowVec logits;
};

class BertModel {
public:
    BertModel() = default;
    BertModel(BertConfig cfg, BertWeights w);

    const BertConfig& config() const noexcept { return cfg_; }
    BertWeights& weights() noexcept { return w_; }
    const BertWeights& weights() const noexcept { return w_; }

    // Word-embedding rows for ids (T x H).
    Mat lookup(std::span<const int> ids) const;

    // Runs the encoder, pooler and (if present) head. `word_rows` replaces the
    // word-embedding lookup; position and token-type embeddings are added as usual.
    void forward(std::span<const int> ids, ForwardPass& pass, const Mat* word_rows = nullptr) const;

    // Backpropagates d(loss)/d(logits) and optionally d(loss)/d(hidden).
    // Accumulates parameter gradients into `grads` when non-null and returns
    // d(loss)/d(word_rows).
    Mat backward(const ForwardPass& pass, const RowVec& dlogits, const Mat* dhidden, BertWeights* grads) const;

    RowVec logits(std::span<const int> ids) const;
    Mat hidden_states(std::span<const int> ids) const;

private:
    BertConfig cfg_;
    BertWeights w_;
};

}  // namespace odsurv::encoder
