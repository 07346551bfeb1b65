#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "odsurv/common/error.hpp"
#include "odsurv/encoder/checkpoint.hpp"
#include "odsurv/encoder/safetensors.hpp"

using namespace odsurv;
using namespace odsurv::encoder;
namespace fs = std::filesystem;

namespace {

const fs::path kTiny = fs::path(ODSURV_TEST_DATA) / "tiny_bert";

nlohmann::json expected() {
    std::ifstream in(kTiny / "expected.json");
    return nlohmann::json::parse(in);
}

double bce_mean(const RowVec& logits, const std::vector<double>& y) {
    double s = 0;
    for (Eigen::Index j = 0; j < logits.size(); ++j) {
        const double z = logits(j);
        s += std::max(z, 0.0) - z * y[static_cast<std::size_t>(j)] + std::log1p(std::exp(-std::abs(z)));
    }
    return s / static_cast<double>(logits.size());
}

RowVec bce_grad(const RowVec& logits, const std::vector<double>& y) {
    RowVec g(logits.size());
    for (Eigen::Index j = 0; j < logits.size(); ++j)
        g(j) = (1.0 / (1.0 + std::exp(-logits(j))) - y[static_cast<std::size_t>(j)]) / static_cast<double>(logits.size());
    return g;
}

BertConfig small_config() {
    BertConfig c;
    c.vocab_size = 12;
    c.hidden_size = 8;
    c.num_hidden_layers = 2;
    c.num_attention_heads = 2;
    c.intermediate_size = 12;
    c.max_position_embeddings = 16;
    c.num_labels = 3;
    return c;
}

}  // namespace

TEST_CASE("forward pass matches the reference implementation on a tiny checkpoint") {
    const auto b = load_encoder(kTiny.string());
    const auto ex = expected();
    CHECK(b.model.config().num_labels == 3);
    for (const char* key : {"0", "1", "2"}) {
        const auto& e = ex.at(key);
        const auto ids = e.at("ids").get<std::vector<int>>();
        const auto logits = b.model.logits(ids);
        const auto want = e.at("logits").get<std::vector<double>>();
        REQUIRE(logits.size() == static_cast<Eigen::Index>(want.size()));
        for (std::size_t j = 0; j < want.size(); ++j) CHECK(logits(static_cast<Eigen::Index>(j)) == doctest::Approx(want[j]).epsilon(1e-9));
        const RowVec mean = b.model.hidden_states(ids).colwise().mean();
        const auto want_mean = e.at("hidden_mean").get<std::vector<double>>();
        for (std::size_t j = 0; j < want_mean.size(); ++j)
            CHECK(mean(static_cast<Eigen::Index>(j)) == doctest::Approx(want_mean[j]).epsilon(1e-9));
    }
}

TEST_CASE("backward pass matches reference gradients of the multi-label loss") {
    const auto b = load_encoder(kTiny.string());
    const auto ex = expected();
    const auto ids = ex.at("0").at("ids").get<std::vector<int>>();
    const std::vector<double> y{1, 0, 1};
    ForwardPass pass;
    b.model.forward(ids, pass);
    CHECK(bce_mean(pass.logits, y) == doctest::Approx(ex.at("grad").at("loss").get<double>()).epsilon(1e-10));
    auto grads = b.model.weights().zeros_like();
    b.model.backward(pass, bce_grad(pass.logits, y), nullptr, &grads);
    const auto row5 = ex.at("grad").at("word_emb_row5").get<std::vector<double>>();
    for (std::size_t j = 0; j < row5.size(); ++j)
        CHECK(grads.word_embeddings(5, static_cast<Eigen::Index>(j)) == doctest::Approx(row5[j]).epsilon(1e-8));
    const auto q = ex.at("grad").at("layer0_query_weight_00").get<std::vector<double>>();
    for (std::size_t j = 0; j < q.size(); ++j)
        CHECK(grads.layers[0].query.weight(0, static_cast<Eigen::Index>(j)) == doctest::Approx(q[j]).epsilon(1e-8));
}

TEST_CASE("analytic gradients agree with central differences for every tensor") {
    auto cfg = small_config();
    SUBCASE("cls pooling") { cfg.classifier_pooling = "cls"; }
    SUBCASE("mean pooling") { cfg.classifier_pooling = "mean"; }
    BertModel model(cfg, init_weights(cfg, 11));
    // Larger weights so every nonlinearity is exercised away from zero.
    model.weights().visit([](const std::string&, Mat& m) { m *= 4.0; });
    const std::vector<int> ids{2, 5, 7, 9, 3};
    const std::vector<double> y{1, 0, 1};

    ForwardPass pass;
    model.forward(ids, pass);
    auto grads = model.weights().zeros_like();
    const Mat dwords = model.backward(pass, bce_grad(pass.logits, y), nullptr, &grads);

    auto loss = [&] { return bce_mean(model.logits(ids), y); };
    const double h = 1e-6;
    std::vector<std::pair<std::string, Mat*>> params;
    model.weights().visit([&](const std::string& name, Mat& m) { params.emplace_back(name, &m); });
    std::vector<std::pair<std::string, const Mat*>> gparams;
    std::as_const(grads).visit([&](const std::string& name, const Mat& m) { gparams.emplace_back(name, &m); });
    REQUIRE(params.size() == gparams.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        Mat& w = *params[p].second;
        const Mat& g = *gparams[p].second;
        for (Eigen::Index k = 0; k < std::min<Eigen::Index>(w.size(), 5); ++k) {
            const Eigen::Index idx = (k * 7919) % w.size();
            const double orig = w.data()[idx];
            w.data()[idx] = orig + h;
            const double up = loss();
            w.data()[idx] = orig - h;
            const double down = loss();
            w.data()[idx] = orig;
            const double numeric = (up - down) / (2 * h);
            INFO(params[p].first, " index ", idx);
            CHECK(g.data()[idx] == doctest::Approx(numeric).epsilon(1e-4).scale(1e-5));
        }
    }

    // d loss / d word rows, used by attribution.
    Mat rows = model.lookup(ids);
    for (Eigen::Index t = 0; t < rows.rows(); ++t) {
        const Eigen::Index d = t % rows.cols();
        Mat up = rows, down = rows;
        up(t, d) += h;
        down(t, d) -= h;
        ForwardPass pu, pd;
        model.forward(ids, pu, &up);
        model.forward(ids, pd, &down);
        const double numeric = (bce_mean(pu.logits, y) - bce_mean(pd.logits, y)) / (2 * h);
        CHECK(dwords(t, d) == doctest::Approx(numeric).epsilon(1e-4).scale(1e-5));
    }
}

TEST_CASE("hidden-state gradients flow through the encoder") {
    const auto cfg = small_config();
    const BertModel model(cfg, init_weights(cfg, 3));
    const std::vector<int> ids{2, 4, 6, 3};
    ForwardPass pass;
    model.forward(ids, pass);
    // loss = sum of hidden states weighted by a fixed pattern
    Mat weight(pass.hidden.rows(), pass.hidden.cols());
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = std::sin(static_cast<double>(i));
    const Mat dwords = model.backward(pass, RowVec(), &weight, nullptr);
    const double h = 1e-6;
    Mat rows = model.lookup(ids);
    for (Eigen::Index t = 0; t < rows.rows(); ++t) {
        Mat up = rows, down = rows;
        up(t, 1) += h;
        down(t, 1) -= h;
        ForwardPass pu, pd;
        model.forward(ids, pu, &up);
        model.forward(ids, pd, &down);
        const double numeric = ((pu.hidden.array() * weight.array()).sum() - (pd.hidden.array() * weight.array()).sum()) / (2 * h);
        CHECK(dwords(t, 1) == doctest::Approx(numeric).epsilon(1e-4).scale(1e-5));
    }
}

TEST_CASE("tokenizer matches the reference uncased WordPiece tokenizer") {
    const auto tok = WordPieceTokenizer::load((kTiny / "vocab.txt").string());
    for (const auto& e : expected().at("tokenizer")) {
        const auto got = tok.encode(e.at("text").get<std::string>(), 512);
        CHECK(got.ids == e.at("ids").get<std::vector<int>>());
        CHECK_FALSE(got.truncated);
    }
}

TEST_CASE("tokenizer truncates the tail and keeps the special tokens") {
    const auto tok = WordPieceTokenizer::load((kTiny / "vocab.txt").string());
    const auto e = tok.encode("acute fentanyl toxicity heroin overdose", 4);
    CHECK(e.truncated);
    CHECK(e.ids == std::vector<int>{2, 8, 5, 3});
    CHECK(tok.encode("", 8).ids == std::vector<int>{2, 3});
}

TEST_CASE("built vocabulary covers every character of its corpus") {
    const std::vector<std::string> texts{"fentanyl toxicity", "heroin and fentanyl", "xq"};
    const WordPieceTokenizer tok(build_vocabulary(texts, 40));
    CHECK(tok.token(0) == "[PAD]");
    CHECK(tok.token_id("fentanyl") >= 0);
    for (const auto& t : texts)
        for (int id : tok.encode(t, 64).ids) CHECK(id != tok.unk_id());
    CHECK_THROWS_AS(WordPieceTokenizer(std::vector<std::string>{"a", "b"}), ConfigError);
}

TEST_CASE("safetensors round trip in both storage types") {
    const auto dir = fs::temp_directory_path() / "odsurv_st_test";
    fs::create_directories(dir);
    TensorFile f;
    f.metadata["format"] = "pt";
    f.tensors["a"] = Tensor{{2, 3}, {1.0, -2.5, 3.25, 0.1, 1e-8, 7.0}};
    f.tensors["b.bias"] = Tensor{{2}, {0.5, -0.5}};
    write_safetensors((dir / "x64.safetensors").string(), f, DType::F64);
    write_safetensors((dir / "x32.safetensors").string(), f, DType::F32);
    const auto r64 = read_safetensors((dir / "x64.safetensors").string());
    CHECK(r64.tensors.at("a").values == f.tensors.at("a").values);
    CHECK(r64.tensors.at("a").shape == std::vector<std::int64_t>{2, 3});
    CHECK(r64.metadata.at("format") == "pt");
    const auto r32 = read_safetensors((dir / "x32.safetensors").string());
    CHECK(r32.tensors.at("a").values[3] == static_cast<double>(0.1f));
    f.tensors["bad"] = Tensor{{3}, {1.0}};
    CHECK_THROWS_AS(write_safetensors((dir / "bad.safetensors").string(), f), ShapeError);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint save and reload reproduces logits exactly") {
    const auto cfg = small_config();
    EncoderBundle b;
    b.model = BertModel(cfg, init_weights(cfg, 99));
    std::vector<std::string> vocab{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b", "c", "d", "e", "f", "g"};
    b.tokenizer = WordPieceTokenizer(vocab);
    b.classes = {"x", "y", "z"};
    b.schema_hash = "abc";
    const auto dir = fs::temp_directory_path() / "odsurv_ckpt_test";
    fs::remove_all(dir);
    save_encoder(dir.string(), b);
    const auto r = load_encoder(dir.string());
    CHECK(r.classes == b.classes);
    CHECK(r.schema_hash == "abc");
    const std::vector<int> ids{2, 5, 6, 3};
    CHECK(r.model.logits(ids) == b.model.logits(ids));

    // A different head width gets a fresh head but keeps the encoder.
    const auto wide = load_encoder(dir.string(), 5, 1);
    CHECK(wide.model.config().num_labels == 5);
    CHECK(wide.model.hidden_states(ids) == b.model.hidden_states(ids));
    CHECK(wide.classes.empty());
    fs::remove_all(dir);
}

TEST_CASE("unloadable encoders are configuration errors") {
    CHECK_THROWS_AS(load_encoder("/nonexistent/encoder"), ConfigError);
    CHECK_THROWS_AS(resolve_encoder("no-such-model", "/nonexistent"), ConfigError);
    CHECK(resolve_encoder("tiny_bert", ODSURV_TEST_DATA) == (fs::path(ODSURV_TEST_DATA) / "tiny_bert").string());
}
