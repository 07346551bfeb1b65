#include "odsurv/embeddings/cui.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "odsurv/common/csv.hpp"
#include "odsurv/common/error.hpp"
#include "odsurv/embeddings/vectors.hpp"

namespace odsurv::embeddings {

struct CuiLexicon::Node {
    std::unordered_map<std::string, std::unique_ptr<Node>> next;
    std::optional<std::string> cui;
};

CuiLexicon::CuiLexicon() : root_(std::make_unique<Node>()) {}
CuiLexicon::~CuiLexicon() = default;
CuiLexicon::CuiLexicon(CuiLexicon&&) noexcept = default;
CuiLexicon& CuiLexicon::operator=(CuiLexicon&&) noexcept = default;

void CuiLexicon::add(std::string_view term, const std::string& cui, const std::string& semantic_type) {
    const auto toks = word_tokens(term);
    if (toks.empty()) return;
    Node* n = root_.get();
    for (const auto& t : toks) {
        auto& child = n->next[t];
        if (!child) child = std::make_unique<Node>();
        n = child.get();
    }
    if (!n->cui) ++n_terms_;
    n->cui = cui;
    std::string st = semantic_type;
    for (auto& c : st) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    semantic_[cui] = st;
}

std::optional<std::string> CuiLexicon::semantic_type(const std::string& cui) const {
    auto it = semantic_.find(cui);
    if (it == semantic_.end()) return std::nullopt;
    return it->second;
}

std::vector<ConceptMatch> CuiLexicon::match(const std::vector<std::string>& tokens) const {
    std::vector<ConceptMatch> out;
    std::size_t i = 0;
    while (i < tokens.size()) {
        const Node* n = root_.get();
        std::size_t best_end = 0;
        const std::string* best = nullptr;
        for (std::size_t j = i; j < tokens.size(); ++j) {
            auto it = n->next.find(tokens[j]);
            if (it == n->next.end()) break;
            n = it->second.get();
            if (n->cui) {
                best_end = j + 1;
                best = &*n->cui;
            }
        }
        if (best) {
            out.push_back({i, best_end, *best});
            i = best_end;
        } else {
            ++i;
        }
    }
    return out;
}

CuiLexicon load_cui_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CUI lexicon '" + path + "'");
    std::string first;
    std::getline(in, first);
    const char delim = sniff_delimiter(first);
    in.clear();
    in.seekg(0);
    // Parse with a synthetic header so the first data row is kept.
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::istringstream stream(std::string("term") + delim + "cui" + delim + "semantic_type\n" + body);
    const auto table = read_csv(stream, delim);
    CuiLexicon lex;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        if (i == 0 && r[0] == "term") continue;
        lex.add(r[0], r[1], r[2]);
    }
    return lex;
}

std::vector<std::string> text_to_cuis(std::string_view text, const CuiLexicon& lexicon,
                                      const std::string& semantic_filter) {
    std::string filter = semantic_filter;
    for (auto& c : filter) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::vector<std::string> out;
    for (auto& m : lexicon.match(word_tokens(text))) {
        if (!filter.empty() && lexicon.semantic_type(m.cui) != filter) continue;
        out.push_back(std::move(m.cui));
    }
    return out;
}

}  // namespace odsurv::embeddings
