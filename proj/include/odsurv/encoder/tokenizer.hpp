#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace odsurv::encoder {

struct Encoding {
    std::vector<int> ids;             // [CLS] pieces... [SEP]
    std::vector<std::string> tokens;  // same length as ids
    bool truncated = false;
};

// Uncased BERT-style tokenizer: whitespace and punctuation splitting followed
// by greedy longest-match-first WordPiece with "##" continuation pieces.
class WordPieceTokenizer {
public:
    WordPieceTokenizer() = default;
    explicit WordPieceTokenizer(std::vector<std::string> vocab);

    static WordPieceTokenizer load(const std::string& vocab_path);
    void save(const std::string& vocab_path) const;

    // Truncates the tail so the encoding (with specials) fits max_length.
    Encoding encode(std::string_view text, std::size_t max_length) const;

    std::vector<std::string> basic_tokenize(std::string_view text) const;
    std::vector<std::string> wordpiece(const std::string& word) const;

    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    int token_id(const std::string& token) const;  // -1 when absent
    const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }

    int pad_id() const noexcept { return pad_; }
    int unk_id() const noexcept { return unk_; }
    int cls_id() const noexcept { return cls_; }
    int sep_id() const noexcept { return sep_; }

private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
    int pad_ = 0, unk_ = 1, cls_ = 2, sep_ = 3;
};

// Vocabulary for training a small encoder from scratch: the five special
// tokens, every observed character (word-initial and "##" continuation),
// then the most frequent words up to max_size.
std::vector<std::string> build_vocabulary(const std::vector<std::string>& texts, std::size_t max_size);

}  // namespace odsurv::encoder
