#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace odsurv::embeddings {

struct ConceptMatch {
    std::size_t begin = 0;  // token range [begin, end)
    std::size_t end = 0;
    std::string cui;
};

// Surface term -> concept identifier dictionary with semantic classes.
// Terms are stored as word-token sequences, so matching is token-aligned.
class CuiLexicon {
public:
    CuiLexicon();
    ~CuiLexicon();
    CuiLexicon(CuiLexicon&&) noexcept;
    CuiLexicon& operator=(CuiLexicon&&) noexcept;

    void add(std::string_view term, const std::string& cui, const std::string& semantic_type);

    std::size_t size() const noexcept { return n_terms_; }
    std::optional<std::string> semantic_type(const std::string& cui) const;

    // Longest match at each position, scanning left to right; matched tokens
    // are consumed so spans never overlap.
    std::vector<ConceptMatch> match(const std::vector<std::string>& tokens) const;

private:
    struct Node;
    std::unique_ptr<Node> root_;
    std::unordered_map<std::string, std::string> semantic_;
    std::size_t n_terms_ = 0;
};

// Rows of term, identifier, semantic class (comma or tab delimited). A header
// row whose first cell is "term" is skipped.
CuiLexicon load_cui_lexicon(const std::string& path);

inline constexpr const char* kDefaultSemanticFilter = "organic chemical";

// Identifiers of the surviving matches in text order. An empty filter keeps
// every match.
std::vector<std::string> text_to_cuis(std::string_view text, const CuiLexicon& lexicon,
                                      const std::string& semantic_filter = kDefaultSemanticFilter);

}  // namespace odsurv::embeddings
