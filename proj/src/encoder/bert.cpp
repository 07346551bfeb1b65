#include "odsurv/encoder/bert.hpp"

#include <cmath>

#include "odsurv/common/error.hpp"
#include "odsurv/common/rng.hpp"

namespace odsurv::encoder {

void BertConfig::validate() const {
    if (vocab_size <= 0 || hidden_size <= 0 || num_hidden_layers < 0 || num_attention_heads <= 0 ||
        intermediate_size <= 0 || max_position_embeddings <= 2 || type_vocab_size <= 0)
        throw ConfigError("encoder config has non-positive dimensions");
    if (hidden_size % num_attention_heads != 0)
        throw ConfigError("hidden_size must be divisible by num_attention_heads");
    if (num_labels < 0) throw ConfigError("num_labels must be non-negative");
    if (classifier_pooling != "cls" && classifier_pooling != "mean")
        throw ConfigError("classifier_pooling must be 'cls' or 'mean'");
}

nlohmann::ordered_json BertConfig::to_json() const {
    nlohmann::ordered_json j;
    j["model_type"] = "bert";
    j["architectures"] = {num_labels > 0 ? "BertForSequenceClassification" : "BertModel"};
    j["vocab_size"] = vocab_size;
    j["hidden_size"] = hidden_size;
    j["num_hidden_layers"] = num_hidden_layers;
    j["num_attention_heads"] = num_attention_heads;
    j["intermediate_size"] = intermediate_size;
    j["max_position_embeddings"] = max_position_embeddings;
    j["type_vocab_size"] = type_vocab_size;
    j["layer_norm_eps"] = layer_norm_eps;
    j["pad_token_id"] = pad_token_id;
    j["hidden_act"] = "gelu";
    j["num_labels"] = num_labels;
    j["problem_type"] = "multi_label_classification";
    if (classifier_pooling != "cls") j["classifier_pooling"] = classifier_pooling;
    return j;
}

BertConfig BertConfig::from_json(const nlohmann::json& j) {
    BertConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.num_hidden_layers = j.value("num_hidden_layers", c.num_hidden_layers);
    c.num_attention_heads = j.value("num_attention_heads", c.num_attention_heads);
    c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
    c.max_position_embeddings = j.value("max_position_embeddings", c.max_position_embeddings);
    c.type_vocab_size = j.value("type_vocab_size", c.type_vocab_size);
    c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
    c.pad_token_id = j.value("pad_token_id", c.pad_token_id);
    if (j.contains("num_labels")) c.num_labels = j.at("num_labels").get<int>();
    else if (j.contains("id2label")) c.num_labels = static_cast<int>(j.at("id2label").size());
    c.classifier_pooling = j.value("classifier_pooling", c.classifier_pooling);
    const auto act = j.value("hidden_act", std::string("gelu"));
    if (act != "gelu") throw ConfigError("unsupported hidden_act '" + act + "' (only exact gelu)");
    c.validate();
    return c;
}

namespace {

void visit_linear(Linear& l, const std::string& name, const std::function<void(const std::string&, Mat&)>& fn) {
    fn(name + ".weight", l.weight);
    fn(name + ".bias", l.bias);
}

void visit_norm(LayerNorm& n, const std::string& name, const std::function<void(const std::string&, Mat&)>& fn) {
    fn(name + ".weight", n.gamma);
    fn(name + ".bias", n.beta);
}

}  // namespace

void BertWeights::visit(const std::function<void(const std::string&, Mat&)>& fn) {
    fn("bert.embeddings.word_embeddings.weight", word_embeddings);
    fn("bert.embeddings.position_embeddings.weight", position_embeddings);
    fn("bert.embeddings.token_type_embeddings.weight", token_type_embeddings);
    visit_norm(embedding_norm, "bert.embeddings.LayerNorm", fn);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "bert.encoder.layer." + std::to_string(i);
        auto& L = layers[i];
        visit_linear(L.query, p + ".attention.self.query", fn);
        visit_linear(L.key, p + ".attention.self.key", fn);
        visit_linear(L.value, p + ".attention.self.value", fn);
        visit_linear(L.attention_output, p + ".attention.output.dense", fn);
        visit_norm(L.attention_norm, p + ".attention.output.LayerNorm", fn);
        visit_linear(L.intermediate, p + ".intermediate.dense", fn);
        visit_linear(L.output, p + ".output.dense", fn);
        visit_norm(L.output_norm, p + ".output.LayerNorm", fn);
    }
    visit_linear(pooler, "bert.pooler.dense", fn);
    if (classifier.weight.size() > 0) visit_linear(classifier, "classifier", fn);
}

void BertWeights::visit(const std::function<void(const std::string&, const Mat&)>& fn) const {
    const_cast<BertWeights*>(this)->visit([&](const std::string& n, Mat& m) { fn(n, m); });
}

BertWeights BertWeights::zeros_like() const {
    BertWeights z = *this;
    z.set_zero();
    return z;
}

void BertWeights::set_zero() {
    visit([](const std::string&, Mat& m) { m.setZero(); });
}

bool BertWeights::all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
    return ok;
}

namespace {

Mat normal_matrix(int rows, int cols, Engine& eng, double stddev) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(standard_normal(eng) * stddev);
    return m;
}

LayerNorm init_norm(int h) { return {Mat::Ones(1, h), Mat::Zero(1, h)}; }

}  // namespace

Linear init_linear(int out, int in, std::uint64_t seed) {
    Engine eng(seed);
    return {normal_matrix(out, in, eng, 0.02), Mat::Zero(1, out)};
}

BertWeights init_weights(const BertConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int H = cfg.hidden_size, I = cfg.intermediate_size;
    std::uint64_t counter = 0;
    auto next_seed = [&] { return stream_seed(seed, counter++); };
    BertWeights w;
    {
        Engine eng(next_seed());
        w.word_embeddings = normal_matrix(cfg.vocab_size, H, eng, 0.02);
        if (cfg.pad_token_id >= 0 && cfg.pad_token_id < cfg.vocab_size) w.word_embeddings.row(cfg.pad_token_id).setZero();
        w.position_embeddings = normal_matrix(cfg.max_position_embeddings, H, eng, 0.02);
        w.token_type_embeddings = normal_matrix(cfg.type_vocab_size, H, eng, 0.02);
    }
    w.embedding_norm = init_norm(H);
    for (int l = 0; l < cfg.num_hidden_layers; ++l) {
        EncoderLayer L;
        L.query = init_linear(H, H, next_seed());
        L.key = init_linear(H, H, next_seed());
        L.value = init_linear(H, H, next_seed());
        L.attention_output = init_linear(H, H, next_seed());
        L.attention_norm = init_norm(H);
        L.intermediate = init_linear(I, H, next_seed());
        L.output = init_linear(H, I, next_seed());
        L.output_norm = init_norm(H);
        w.layers.push_back(std::move(L));
    }
    w.pooler = init_linear(H, H, next_seed());
    if (cfg.num_labels > 0) w.classifier = init_linear(cfg.num_labels, H, next_seed());
    return w;
}

namespace {

constexpr Scalar kInvSqrt2 = static_cast<Scalar>(0.70710678118654752440);
constexpr Scalar kInvSqrt2Pi = static_cast<Scalar>(0.39894228040143267794);

Mat apply_linear(const Mat& x, const Linear& l) {
    Mat y = x * l.weight.transpose();
    y.rowwise() += l.bias.row(0);
    return y;
}

// dx = dy W; parameter grads accumulate when g is non-null.
Mat linear_backward(const Mat& x, const Linear& l, const Mat& dy, Linear* g) {
    if (g) {
        g->weight.noalias() += dy.transpose() * x;
        g->bias += dy.colwise().sum();
    }
    return dy * l.weight;
}

Mat layer_norm(const Mat& x, const LayerNorm& n, double eps, LayerNormCache& cache) {
    const auto H = static_cast<Scalar>(x.cols());
    cache.xhat.resize(x.rows(), x.cols());
    cache.inv_std.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar mean = x.row(r).sum() / H;
        const auto centered = (x.row(r).array() - mean).eval();
        const Scalar var = centered.square().sum() / H;
        const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
        cache.inv_std(r) = inv;
        cache.xhat.row(r) = centered * inv;
    }
    Mat y = (cache.xhat.array().rowwise() * n.gamma.row(0).array()).matrix();
    y.rowwise() += n.beta.row(0);
    return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNorm& n, const LayerNormCache& cache, LayerNorm* g) {
    if (g) {
        g->gamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
        g->beta += dy.colwise().sum();
    }
    const auto H = static_cast<Scalar>(dy.cols());
    Mat dxhat = (dy.array().rowwise() * n.gamma.row(0).array()).matrix();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const Scalar s1 = dxhat.row(r).sum();
        const Scalar s2 = dxhat.row(r).dot(cache.xhat.row(r));
        dx.row(r) = (cache.inv_std(r) / H) * (H * dxhat.row(r).array() - s1 - cache.xhat.row(r).array() * s2).matrix();
    }
    return dx;
}

Scalar gelu(Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::erf(x * kInvSqrt2)); }
Scalar gelu_grad(Scalar x) {
    return Scalar(0.5) * (Scalar(1) + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(Scalar(-0.5) * x * x);
}

}  // namespace

BertModel::BertModel(BertConfig cfg, BertWeights w) : cfg_(std::move(cfg)), w_(std::move(w)) {
    cfg_.validate();
    if (w_.word_embeddings.rows() != cfg_.vocab_size || w_.word_embeddings.cols() != cfg_.hidden_size)
        throw ConfigError("word embedding shape does not match config");
    if (static_cast<int>(w_.layers.size()) != cfg_.num_hidden_layers)
        throw ConfigError("layer count does not match config");
    if (cfg_.num_labels > 0 && w_.classifier.weight.rows() != cfg_.num_labels)
        throw ConfigError("classification head width does not match num_labels");
}

Mat BertModel::lookup(std::span<const int> ids) const {
    Mat rows(static_cast<Eigen::Index>(ids.size()), cfg_.hidden_size);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || ids[t] >= cfg_.vocab_size) throw ValidationError("token id out of vocabulary range");
        rows.row(static_cast<Eigen::Index>(t)) = w_.word_embeddings.row(ids[t]);
    }
    return rows;
}

void BertModel::forward(std::span<const int> ids, ForwardPass& pass, const Mat* word_rows) const {
    const auto T = static_cast<Eigen::Index>(ids.size());
    if (T == 0) throw ValidationError("empty token sequence");
    if (T > cfg_.max_position_embeddings) throw ValidationError("sequence longer than max_position_embeddings");
    const int H = cfg_.hidden_size, nh = cfg_.num_attention_heads, dh = H / nh;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    pass.ids.assign(ids.begin(), ids.end());
    pass.word_rows = word_rows ? *word_rows : lookup(ids);
    Mat e = pass.word_rows + w_.position_embeddings.topRows(T);
    e.rowwise() += w_.token_type_embeddings.row(0);
    Mat x = layer_norm(e, w_.embedding_norm, cfg_.layer_norm_eps, pass.embedding_norm);

    pass.layers.resize(w_.layers.size());
    for (std::size_t l = 0; l < w_.layers.size(); ++l) {
        const auto& L = w_.layers[l];
        auto& c = pass.layers[l];
        c.input = x;
        c.q = apply_linear(x, L.query);
        c.k = apply_linear(x, L.key);
        c.v = apply_linear(x, L.value);
        c.context.resize(T, H);
        c.probs.resize(static_cast<std::size_t>(nh));
        for (int h = 0; h < nh; ++h) {
            Mat s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
            for (Eigen::Index r = 0; r < T; ++r) {
                const Scalar m = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - m).exp().matrix();
                s.row(r) /= s.row(r).sum();
            }
            c.context.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
            c.probs[static_cast<std::size_t>(h)] = std::move(s);
        }
        Mat attn = apply_linear(c.context, L.attention_output);
        c.h1 = layer_norm(x + attn, L.attention_norm, cfg_.layer_norm_eps, c.norm1);
        c.pre_act = apply_linear(c.h1, L.intermediate);
        c.act = c.pre_act.unaryExpr([](Scalar v) { return gelu(v); });
        Mat ffn = apply_linear(c.act, L.output);
        x = layer_norm(c.h1 + ffn, L.output_norm, cfg_.layer_norm_eps, c.norm2);
    }
    pass.hidden = x;
    if (cfg_.classifier_pooling == "mean") {
        pass.pooled = x.colwise().mean();
    } else {
        RowVec pre = x.row(0) * w_.pooler.weight.transpose() + w_.pooler.bias;
        pass.pooled = pre.array().tanh().matrix();
    }
    if (cfg_.num_labels > 0) pass.logits = pass.pooled * w_.classifier.weight.transpose() + w_.classifier.bias;
    else pass.logits.resize(0);
}

Mat BertModel::backward(const ForwardPass& pass, const RowVec& dlogits, const Mat* dhidden, BertWeights* grads) const {
    const auto T = static_cast<Eigen::Index>(pass.ids.size());
    const int H = cfg_.hidden_size, nh = cfg_.num_attention_heads, dh = H / nh;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    Mat dx = dhidden ? *dhidden : Mat::Zero(T, H);
    if (cfg_.num_labels > 0 && dlogits.size() > 0) {
        if (grads) {
            grads->classifier.weight.noalias() += dlogits.transpose() * pass.pooled;
            grads->classifier.bias += dlogits;
        }
        RowVec dpooled = dlogits * w_.classifier.weight;
        if (cfg_.classifier_pooling == "mean") {
            dx.rowwise() += dpooled / static_cast<Scalar>(T);
        } else {
            RowVec dpre = (dpooled.array() * (Scalar(1) - pass.pooled.array().square())).matrix();
            if (grads) {
                grads->pooler.weight.noalias() += dpre.transpose() * pass.hidden.row(0);
                grads->pooler.bias += dpre;
            }
            dx.row(0) += dpre * w_.pooler.weight;
        }
    }

    for (std::size_t li = w_.layers.size(); li-- > 0;) {
        const auto& L = w_.layers[li];
        const auto& c = pass.layers[li];
        EncoderLayer* G = grads ? &grads->layers[li] : nullptr;

        Mat ds2 = layer_norm_backward(dx, L.output_norm, c.norm2, G ? &G->output_norm : nullptr);
        Mat dact = linear_backward(c.act, L.output, ds2, G ? &G->output : nullptr);
        Mat dpre = (dact.array() * c.pre_act.unaryExpr([](Scalar v) { return gelu_grad(v); }).array()).matrix();
        Mat dh1 = ds2 + linear_backward(c.h1, L.intermediate, dpre, G ? &G->intermediate : nullptr);

        Mat ds1 = layer_norm_backward(dh1, L.attention_norm, c.norm1, G ? &G->attention_norm : nullptr);
        Mat dcontext = linear_backward(c.context, L.attention_output, ds1, G ? &G->attention_output : nullptr);

        Mat dq(T, H), dk(T, H), dv(T, H);
        for (int h = 0; h < nh; ++h) {
            const Mat& A = c.probs[static_cast<std::size_t>(h)];
            const auto dC = dcontext.middleCols(h * dh, dh);
            Mat dA = dC * c.v.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh) = A.transpose() * dC;
            Mat dS = A.cwiseProduct(dA);
            for (Eigen::Index r = 0; r < T; ++r) {
                const Scalar s = dS.row(r).sum();
                dS.row(r) -= A.row(r) * s;
            }
            dS *= scale;
            dq.middleCols(h * dh, dh) = dS * c.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh) = dS.transpose() * c.q.middleCols(h * dh, dh);
        }
        Mat dinput = ds1;
        dinput += linear_backward(c.input, L.query, dq, G ? &G->query : nullptr);
        dinput += linear_backward(c.input, L.key, dk, G ? &G->key : nullptr);
        dinput += linear_backward(c.input, L.value, dv, G ? &G->value : nullptr);
        dx = std::move(dinput);
    }

    Mat de = layer_norm_backward(dx, w_.embedding_norm, pass.embedding_norm, grads ? &grads->embedding_norm : nullptr);
    if (grads) {
        for (Eigen::Index t = 0; t < T; ++t) {
            grads->word_embeddings.row(pass.ids[static_cast<std::size_t>(t)]) += de.row(t);
            grads->position_embeddings.row(t) += de.row(t);
        }
        grads->token_type_embeddings.row(0) += de.colwise().sum();
    }
    return de;
}

RowVec BertModel::logits(std::span<const int> ids) const {
    ForwardPass p;
    forward(ids, p);
    return p.logits;
}

Mat BertModel::hidden_states(std::span<const int> ids) const {
    ForwardPass p;
    forward(ids, p);
    return p.hidden;
}

}  // namespace odsurv::encoder
