#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace odsurv::embeddings {

enum class Backend { Static, Cui, Contextual };

const char* to_string(Backend b);
Backend backend_from_string(const std::string& s);

struct DocumentVector {
    Eigen::VectorXd values;
    Backend backend = Backend::Static;
    std::size_t in_vocabulary = 0;
    std::size_t oov_count = 0;
    bool all_oov = false;  // zero-vector fallback was used

    std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
};

// Immutable token -> vector table; lookups are lowercased.
class VectorTable {
public:
    VectorTable() = default;
    explicit VectorTable(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return tokens_.size(); }

    // Returns false (and keeps the first vector) when the token already exists.
    bool add(std::string_view token, std::span<const double> values);

    const double* find(std::string_view token) const;
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> tokens_;
    std::vector<double> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Word-per-line text: token, then dim space-separated decimals. dim is taken
// from the first line and enforced everywhere else.
VectorTable load_vector_table(const std::string& path);
VectorTable parse_vector_table(std::istream& in, const std::string& source_name = "<stream>");

// Lowercase alphanumeric runs (internal '-' and '\'' kept).
std::vector<std::string> word_tokens(std::string_view text);

// Arithmetic mean of in-vocabulary vectors. OOV tokens are skipped and
// counted; a document with no known token gets the zero vector.
DocumentVector mean_pool(std::span<const std::string> tokens, const VectorTable& table, Backend tag);

inline DocumentVector embed_mean_pooled(std::span<const std::string> tokens, const VectorTable& table) {
    return mean_pool(tokens, table, Backend::Static);
}

inline DocumentVector cuis_to_vector(std::span<const std::string> cuis, const VectorTable& table) {
    return mean_pool(cuis, table, Backend::Cui);
}

}  // namespace odsurv::embeddings
