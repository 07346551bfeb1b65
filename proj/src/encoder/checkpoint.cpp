#include "odsurv/encoder/checkpoint.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "odsurv/common/error.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/encoder/safetensors.hpp"

namespace fs = std::filesystem;

namespace odsurv::encoder {

namespace {

std::string strip_prefix(const std::string& name) {
    static const std::string p = "bert.";
    return name.rfind(p, 0) == 0 ? name.substr(p.size()) : name;
}

// Older checkpoints name LayerNorm parameters gamma/beta.
std::string canonical_name(std::string name) {
    name = strip_prefix(name);
    auto replace_suffix = [&](const std::string& from, const std::string& to) {
        if (name.size() >= from.size() && name.compare(name.size() - from.size(), from.size(), from) == 0 &&
            name.find("LayerNorm") != std::string::npos)
            name = name.substr(0, name.size() - from.size()) + to;
    };
    replace_suffix(".gamma", ".weight");
    replace_suffix(".beta", ".bias");
    return name;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p.string() + " is not valid JSON: " + e.what());
    }
}

}  // namespace

void save_encoder(const std::string& dir, const EncoderBundle& b) {
    fs::create_directories(dir);
    auto cfg = b.model.config().to_json();
    if (!b.classes.empty()) {
        nlohmann::ordered_json id2label, label2id;
        for (std::size_t i = 0; i < b.classes.size(); ++i) {
            id2label[std::to_string(i)] = b.classes[i];
            label2id[b.classes[i]] = i;
        }
        cfg["id2label"] = id2label;
        cfg["label2id"] = label2id;
    }
    cfg["odsurv"] = {{"classes", b.classes}, {"schema_hash", b.schema_hash}, {"training", b.training}};
    {
        std::ofstream out(fs::path(dir) / "config.json");
        out << cfg.dump(2) << '\n';
        if (!out) throw IngestError("cannot write config.json in " + dir);
    }
    b.tokenizer.save((fs::path(dir) / "vocab.txt").string());

    TensorFile tf;
    tf.metadata["format"] = "pt";
    b.model.weights().visit([&](const std::string& name, const Mat& m) {
        Tensor t;
        if (m.rows() == 1 && (name.ends_with(".bias") || name.find("LayerNorm") != std::string::npos))
            t.shape = {m.cols()};
        else
            t.shape = {m.rows(), m.cols()};
        t.values.assign(m.data(), m.data() + m.size());
        tf.tensors.emplace(name, std::move(t));
    });
    write_safetensors((fs::path(dir) / "model.safetensors").string(), tf, DType::F64);
}

EncoderBundle load_encoder(const std::string& dir, std::optional<int> num_labels, std::uint64_t head_seed) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw ConfigError("encoder checkpoint '" + dir + "' is not a directory");
    const auto cfg_json = read_json(root / "config.json");
    BertConfig cfg;
    try {
        cfg = BertConfig::from_json(cfg_json);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad encoder config in " + dir + ": " + e.what());
    }
    const int stored_labels = cfg.num_labels;

    EncoderBundle b;
    if (!fs::exists(root / "vocab.txt")) throw ConfigError("encoder checkpoint " + dir + " has no vocab.txt");
    b.tokenizer = WordPieceTokenizer::load((root / "vocab.txt").string());
    if (static_cast<int>(b.tokenizer.vocab_size()) > cfg.vocab_size)
        throw ConfigError("vocab.txt is larger than the embedding table in " + dir);

    if (cfg_json.contains("odsurv")) {
        const auto& o = cfg_json.at("odsurv");
        b.classes = o.value("classes", std::vector<std::string>{});
        b.schema_hash = o.value("schema_hash", std::string{});
        if (o.contains("training")) b.training = o.at("training");
    }

    const auto weights_path = root / "model.safetensors";
    if (!fs::exists(weights_path)) throw ConfigError("encoder checkpoint " + dir + " has no model.safetensors");
    auto tf = read_safetensors(weights_path.string());
    std::map<std::string, Tensor> by_name;
    for (auto& [k, v] : tf.tensors) by_name[canonical_name(k)] = std::move(v);

    bool head_loaded = false;
    if (num_labels) cfg.num_labels = *num_labels;
    if (cfg.num_labels > 0) {
        auto it = by_name.find("classifier.weight");
        head_loaded = it != by_name.end() && it->second.shape.size() == 2 && it->second.shape[0] == cfg.num_labels;
    }
    BertWeights w = init_weights(cfg, stream_seed(head_seed, 0xC1A5));
    std::vector<std::string> missing;
    w.visit([&](const std::string& name, Mat& m) {
        const auto key = strip_prefix(name);
        const bool is_head = key.rfind("classifier.", 0) == 0;
        const bool is_pooler = key.rfind("pooler.", 0) == 0;
        if (is_head && !head_loaded) return;
        auto it = by_name.find(key);
        if (it == by_name.end()) {
            if (!is_pooler && !is_head) missing.push_back(name);
            return;
        }
        if (it->second.numel() != m.size())
            throw ConfigError("tensor " + name + " in " + dir + " has the wrong number of elements");
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(it->second.values[static_cast<std::size_t>(i)]);
    });
    if (!missing.empty()) throw ConfigError("encoder checkpoint " + dir + " lacks tensor " + missing.front());
    if (!w.all_finite()) throw ConfigError("encoder checkpoint " + dir + " contains non-finite weights");
    if (stored_labels != cfg.num_labels && !b.classes.empty() && static_cast<int>(b.classes.size()) != cfg.num_labels)
        b.classes.clear();
    b.model = BertModel(cfg, std::move(w));
    return b;
}

std::string resolve_encoder(const std::string& encoder_id, const std::string& repo_root) {
    if (encoder_id.empty()) throw ConfigError("empty encoder identifier");
    if (fs::is_directory(encoder_id)) return encoder_id;
    std::string root = repo_root;
    if (root.empty()) {
        if (const char* env = std::getenv("ODSURV_MODEL_REPO")) root = env;
    }
    if (!root.empty()) {
        const auto candidate = fs::path(root) / encoder_id;
        if (fs::is_directory(candidate)) return candidate.string();
    }
    throw ConfigError("encoder '" + encoder_id + "' not found" + (root.empty() ? std::string() : " under " + root));
}

}  // namespace odsurv::encoder
