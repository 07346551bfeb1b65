#include "odsurv/encoder/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "odsurv/common/error.hpp"

namespace odsurv::encoder {

namespace {

bool is_punct(unsigned char c) {
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

constexpr std::size_t kMaxCharsPerWord = 100;

}  // namespace

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
    auto need = [&](const char* t) {
        auto id = token_id(t);
        if (id < 0) throw ConfigError(std::string("tokenizer vocabulary lacks ") + t);
        return id;
    };
    pad_ = need("[PAD]");
    unk_ = need("[UNK]");
    cls_ = need("[CLS]");
    sep_ = need("[SEP]");
}

WordPieceTokenizer WordPieceTokenizer::load(const std::string& vocab_path) {
    std::ifstream in(vocab_path);
    if (!in) throw ConfigError("cannot open vocabulary '" + vocab_path + "'");
    std::vector<std::string> v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.push_back(line);
    }
    return WordPieceTokenizer(std::move(v));
}

void WordPieceTokenizer::save(const std::string& vocab_path) const {
    std::ofstream out(vocab_path);
    if (!out) throw ConfigError("cannot write vocabulary '" + vocab_path + "'");
    for (const auto& t : vocab_) out << t << '\n';
}

int WordPieceTokenizer::token_id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

std::vector<std::string> WordPieceTokenizer::basic_tokenize(std::string_view text) const {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c == 0 || (c < 32 && !std::isspace(c)) || c == 0x7F) continue;
        if (std::isspace(c)) {
            flush();
        } else if (is_punct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

std::vector<std::string> WordPieceTokenizer::wordpiece(const std::string& word) const {
    if (word.size() > kMaxCharsPerWord) return {"[UNK]"};
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
        std::size_t end = word.size();
        std::string found;
        while (start < end) {
            std::string sub = word.substr(start, end - start);
            if (start > 0) sub = "##" + sub;
            if (index_.contains(sub)) {
                found = std::move(sub);
                break;
            }
            --end;
        }
        if (found.empty()) return {"[UNK]"};
        pieces.push_back(std::move(found));
        start = end;
    }
    return pieces;
}

Encoding WordPieceTokenizer::encode(std::string_view text, std::size_t max_length) const {
    if (max_length < 2) throw ConfigError("max_length must leave room for [CLS] and [SEP]");
    Encoding enc;
    enc.tokens.push_back("[CLS]");
    for (const auto& w : basic_tokenize(text)) {
        for (auto& p : wordpiece(w)) {
            if (enc.tokens.size() + 1 >= max_length) {
                enc.truncated = true;
                break;
            }
            enc.tokens.push_back(std::move(p));
        }
        if (enc.truncated) break;
    }
    enc.tokens.push_back("[SEP]");
    enc.ids.reserve(enc.tokens.size());
    for (const auto& t : enc.tokens) {
        const int id = token_id(t);
        enc.ids.push_back(id < 0 ? unk_ : id);
    }
    return enc;
}

std::vector<std::string> build_vocabulary(const std::vector<std::string>& texts, std::size_t max_size) {
    std::vector<std::string> vocab = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    const WordPieceTokenizer basic(vocab);
    std::set<std::string> chars;
    std::map<std::string, std::size_t> freq;
    for (const auto& t : texts) {
        for (const auto& w : basic.basic_tokenize(t)) {
            ++freq[w];
            for (char c : w) chars.insert(std::string(1, c));
        }
    }
    std::set<std::string> have(vocab.begin(), vocab.end());
    auto push = [&](const std::string& t) {
        if (vocab.size() < max_size && have.insert(t).second) vocab.push_back(t);
    };
    for (const auto& c : chars) push(c);
    for (const auto& c : chars) push("##" + c);
    std::vector<std::pair<std::string, std::size_t>> words(freq.begin(), freq.end());
    std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [w, n] : words) push(w);
    return vocab;
}

}  // namespace odsurv::encoder
