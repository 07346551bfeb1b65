#include "odsurv/finetune/finetune.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "odsurv/common/error.hpp"
#include "odsurv/common/parallel.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/metrics/metrics.hpp"

namespace odsurv::finetune {

using encoder::BertWeights;
using encoder::Mat;
using encoder::RowVec;
using Clock = std::chrono::steady_clock;

void FineTuneConfig::validate() const {
    if (encoder_id.empty()) throw ConfigError("fine-tuning needs an encoder_id");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");
    if (selection_metric != "validation_macro_f1") throw ConfigError("selection_metric must be validation_macro_f1");
}

nlohmann::ordered_json FineTuneConfig::to_json() const {
    nlohmann::ordered_json j{{"encoder_id", encoder_id},       {"batch_size", batch_size},
                             {"weight_decay", weight_decay},   {"learning_rate", learning_rate},
                             {"epochs", epochs},               {"selection_metric", selection_metric},
                             {"threshold", threshold},         {"seed", seed},
                             {"max_grad_norm", max_grad_norm}, {"adam_beta1", adam_beta1},
                             {"adam_beta2", adam_beta2},       {"adam_epsilon", adam_epsilon},
                             {"max_length", max_length},       {"repair_implications", repair_implications},
                             {"lr_schedule", "linear"},        {"dropout", 0.0}};
    if (encoder_id == "scratch")
        j["scratch"] = {{"hidden_size", scratch.hidden_size},
                        {"num_hidden_layers", scratch.num_hidden_layers},
                        {"num_attention_heads", scratch.num_attention_heads},
                        {"intermediate_size", scratch.intermediate_size},
                        {"max_position_embeddings", scratch.max_position_embeddings},
                        {"vocab_size", scratch.vocab_size},
                        {"classifier_pooling", scratch.classifier_pooling}};
    return j;
}

FineTuneConfig FineTuneConfig::from_json(const nlohmann::json& j) {
    FineTuneConfig c;
    try {
        c.encoder_id = j.at("encoder_id").get<std::string>();
        c.batch_size = j.value("batch_size", c.batch_size);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.selection_metric = j.value("selection_metric", c.selection_metric);
        c.threshold = j.value("threshold", c.threshold);
        c.seed = j.value("seed", c.seed);
        c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
        c.max_length = j.value("max_length", c.max_length);
        c.repair_implications = j.value("repair_implications", c.repair_implications);
        if (j.contains("scratch")) {
            const auto& s = j.at("scratch");
            c.scratch.hidden_size = s.value("hidden_size", c.scratch.hidden_size);
            c.scratch.num_hidden_layers = s.value("num_hidden_layers", c.scratch.num_hidden_layers);
            c.scratch.num_attention_heads = s.value("num_attention_heads", c.scratch.num_attention_heads);
            c.scratch.intermediate_size = s.value("intermediate_size", c.scratch.intermediate_size);
            c.scratch.max_position_embeddings = s.value("max_position_embeddings", c.scratch.max_position_embeddings);
            c.scratch.vocab_size = s.value("vocab_size", c.scratch.vocab_size);
            c.scratch.classifier_pooling = s.value("classifier_pooling", c.scratch.classifier_pooling);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad fine-tuning config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t EncoderClassifier::effective_max_length() const {
    const auto limit = static_cast<std::size_t>(bundle.model.config().max_position_embeddings);
    return max_length == 0 ? limit : std::min(limit, max_length);
}

nlohmann::ordered_json InferenceStats::to_json() const {
    return {{"n_texts", n_texts},
            {"batches", batch_seconds.size()},
            {"total_seconds", total_seconds},
            {"texts_per_second", texts_per_second()},
            {"truncated", truncated},
            {"batch_seconds", batch_seconds}};
}

namespace {

struct AdamW {
    BertWeights m, v;
    long step = 0;
};

bool decays(const std::string& name) {
    return !(name.ends_with(".bias") || name.find("LayerNorm") != std::string::npos);
}

double global_norm(const BertWeights& g) {
    double s = 0;
    g.visit([&](const std::string&, const Mat& m) { s += m.squaredNorm(); });
    return std::sqrt(s);
}

void adamw_step(BertWeights& w, BertWeights& g, AdamW& opt, const FineTuneConfig& cfg, double lr) {
    ++opt.step;
    const double bc1 = 1 - std::pow(cfg.adam_beta1, static_cast<double>(opt.step));
    const double bc2 = 1 - std::pow(cfg.adam_beta2, static_cast<double>(opt.step));
    std::vector<Mat*> ws, gs, ms, vs;
    std::vector<bool> decay;
    w.visit([&](const std::string& name, Mat& m) {
        ws.push_back(&m);
        decay.push_back(decays(name));
    });
    g.visit([&](const std::string&, Mat& m) { gs.push_back(&m); });
    opt.m.visit([&](const std::string&, Mat& m) { ms.push_back(&m); });
    opt.v.visit([&](const std::string&, Mat& m) { vs.push_back(&m); });
    for (std::size_t k = 0; k < ws.size(); ++k) {
        auto& p = *ws[k];
        const auto& gr = *gs[k];
        auto& m = *ms[k];
        auto& v = *vs[k];
        m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * gr;
        v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * gr.cwiseProduct(gr);
        if (decay[k]) p *= 1 - lr * cfg.weight_decay;
        p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.adam_epsilon);
    }
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double bce(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

EncoderClassifier make_initial_model(const std::vector<corpus::LabeledCase>& train, const corpus::LabelSchema& schema,
                                     const FineTuneConfig& cfg, const std::string& model_repo) {
    EncoderClassifier out;
    out.threshold = cfg.threshold;
    out.max_length = cfg.max_length;
    const auto k = static_cast<int>(schema.size());
    if (cfg.encoder_id == "scratch") {
        std::vector<std::string> texts;
        for (const auto& c : train) texts.push_back(c.normalized_text);
        out.bundle.tokenizer = encoder::WordPieceTokenizer(encoder::build_vocabulary(texts, cfg.scratch.vocab_size));
        encoder::BertConfig bc;
        bc.vocab_size = static_cast<int>(out.bundle.tokenizer.vocab_size());
        bc.hidden_size = cfg.scratch.hidden_size;
        bc.num_hidden_layers = cfg.scratch.num_hidden_layers;
        bc.num_attention_heads = cfg.scratch.num_attention_heads;
        bc.intermediate_size = cfg.scratch.intermediate_size;
        bc.max_position_embeddings = cfg.scratch.max_position_embeddings;
        bc.num_labels = k;
        bc.classifier_pooling = cfg.scratch.classifier_pooling;
        bc.validate();
        auto w = encoder::init_weights(bc, stream_seed(cfg.seed, 0x5C7A));
        // Untrained encoder: a head at N(0, 0.02) barely moves under mean pooling,
        // so it gets the usual fan-in uniform init instead.
        Engine eng(stream_seed(cfg.seed, 0x4EAD));
        const double bound = 1.0 / std::sqrt(static_cast<double>(bc.hidden_size));
        for (auto* m : {&w.classifier.weight, &w.classifier.bias})
            for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = bound * (2 * uniform_unit(eng) - 1);
        out.bundle.model = encoder::BertModel(bc, std::move(w));
    } else {
        out.bundle = encoder::load_encoder(encoder::resolve_encoder(cfg.encoder_id, model_repo), k,
                                           stream_seed(cfg.seed, 0x4EAD));
    }
    out.bundle.classes = schema.classes;
    out.bundle.schema_hash = schema.hash();
    return out;
}

}  // namespace

FineTuneResult finetune_encoder(const std::vector<corpus::LabeledCase>& train,
                                const std::vector<corpus::LabeledCase>& validation, const corpus::LabelSchema& schema,
                                const FineTuneConfig& cfg, const std::string& model_repo, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train.empty()) throw TrainingError("empty training split");
    const std::size_t K = schema.size();
    for (const auto& c : train)
        if (c.gold.size() != K) throw ShapeError("gold label width differs from the schema for case " + c.id());

    FineTuneResult result;
    result.model = make_initial_model(train, schema, cfg, model_repo);
    auto& model = result.model.bundle.model;
    const auto max_len = result.model.effective_max_length();

    std::vector<std::vector<int>> ids(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) ids[i] = result.model.bundle.tokenizer.encode(train[i].normalized_text, max_len).ids;

    std::vector<std::string> val_texts;
    LabelMatrix val_gold(0, K);
    for (const auto& c : validation) {
        val_texts.push_back(c.normalized_text);
        val_gold.append_row(c.gold);
    }

    AdamW opt{model.weights().zeros_like(), model.weights().zeros_like(), 0};
    auto grads = model.weights().zeros_like();
    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
    BertWeights best_weights;
    double best_f1 = -1;

    std::vector<std::size_t> order(train.size());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        std::iota(order.begin(), order.end(), 0);
        Engine eng(stream_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        portable_shuffle(order, eng);
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double scale = 1.0 / static_cast<double>((end - start) * K);
            grads.set_zero();
            for (std::size_t b = start; b < end; ++b) {
                const auto& c = train[order[b]];
                encoder::ForwardPass pass;
                model.forward(ids[order[b]], pass);
                RowVec dlogits(static_cast<Eigen::Index>(K));
                for (std::size_t k = 0; k < K; ++k) {
                    const double z = pass.logits(static_cast<Eigen::Index>(k));
                    loss_sum += bce(z, c.gold[k]);
                    dlogits(static_cast<Eigen::Index>(k)) = (sigmoid(z) - c.gold[k]) * scale;
                }
                model.backward(pass, dlogits, nullptr, &grads);
            }
            if (cfg.max_grad_norm > 0) {
                const double norm = global_norm(grads);
                if (norm > cfg.max_grad_norm) {
                    const double f = cfg.max_grad_norm / (norm + 1e-6);
                    grads.visit([&](const std::string&, Mat& m) { m *= f; });
                }
            }
            const double lr = cfg.learning_rate * std::max(0.0, 1.0 - static_cast<double>(opt.step) / total_steps);
            adamw_step(model.weights(), grads, opt, cfg, lr);
        }
        if (!model.weights().all_finite()) throw TrainingError("encoder weights became non-finite in epoch " + std::to_string(epoch));

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(train.size() * K);
        if (!validation.empty()) {
            auto pred = threshold_labels(predict_probabilities(result.model, val_texts, cfg.batch_size), cfg.threshold);
            if (cfg.repair_implications) repair_implications(pred, schema);
            log.validation_macro_f1 = metrics::macro_f1(pred, val_gold);
        }
        log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        result.epochs.push_back(log);
        if (on_epoch) on_epoch(log);
        // Without validation data the last epoch wins.
        if (validation.empty() || log.validation_macro_f1 > best_f1) {
            best_f1 = log.validation_macro_f1;
            best_weights = model.weights();
            result.best_epoch = epoch;
        }
    }
    model.weights() = std::move(best_weights);
    auto snapshot = cfg.to_json();
    snapshot["best_epoch"] = result.best_epoch;
    result.model.bundle.training = snapshot;
    return result;
}

ScoreMatrix predict_probabilities(const EncoderClassifier& model, const std::vector<std::string>& texts,
                                  std::size_t batch_size, InferenceStats* stats, std::size_t workers) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    const std::size_t K = static_cast<std::size_t>(model.bundle.model.config().num_labels);
    if (K == 0) throw ConfigError("encoder has no classification head");
    ScoreMatrix out(texts.size(), K);
    std::vector<char> truncated(texts.size(), 0);
    InferenceStats local;
    const auto max_len = model.effective_max_length();
    const auto all0 = Clock::now();
    for (std::size_t start = 0; start < texts.size(); start += batch_size) {
        const auto t0 = Clock::now();
        const std::size_t end = std::min(texts.size(), start + batch_size);
        parallel_for(
            end - start,
            [&](std::size_t k) {
                const std::size_t i = start + k;
                const auto e = model.bundle.tokenizer.encode(texts[i], max_len);
                truncated[i] = e.truncated;
                const auto logits = model.bundle.model.logits(e.ids);
                for (std::size_t c = 0; c < K; ++c) out(i, c) = sigmoid(logits(static_cast<Eigen::Index>(c)));
            },
            workers);
        local.batch_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    local.total_seconds = std::chrono::duration<double>(Clock::now() - all0).count();
    local.n_texts = texts.size();
    for (char t : truncated) local.truncated += t ? 1 : 0;
    if (stats) *stats = std::move(local);
    return out;
}

LabelMatrix threshold_labels(const ScoreMatrix& probs, double threshold) {
    LabelMatrix out(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < probs.rows(); ++i)
        for (std::size_t c = 0; c < probs.cols(); ++c) out(i, c) = probs(i, c) >= threshold ? 1 : 0;
    return out;
}

void repair_implications(LabelMatrix& labels, const corpus::LabelSchema& schema) {
    if (labels.cols() != schema.size()) throw ShapeError("label width differs from the schema");
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (const auto& [child, parent] : schema.implication_edges)
        edges.emplace_back(schema.require_index(child), schema.require_index(parent));
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto& [c, p] : edges)
                if (labels(i, c) && !labels(i, p)) {
                    labels(i, p) = 1;
                    changed = true;
                }
        }
    }
}

void save_classifier(const std::string& dir, const EncoderClassifier& model) {
    auto copy = model.bundle;
    if (!copy.training.is_object()) copy.training = nlohmann::ordered_json::object();
    copy.training["threshold"] = model.threshold;
    copy.training["max_length"] = model.max_length;
    encoder::save_encoder(dir, copy);
}

EncoderClassifier load_classifier(const std::string& dir) {
    EncoderClassifier m;
    m.bundle = encoder::load_encoder(dir);
    if (m.bundle.model.config().num_labels == 0) throw ConfigError("checkpoint " + dir + " has no classification head");
    if (m.bundle.classes.size() != static_cast<std::size_t>(m.bundle.model.config().num_labels))
        throw ConfigError("checkpoint " + dir + " does not list its class names");
    m.threshold = m.bundle.training.value("threshold", 0.5);
    m.max_length = m.bundle.training.value("max_length", std::size_t{0});
    return m;
}

}  // namespace odsurv::finetune
