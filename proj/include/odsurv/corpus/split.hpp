#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odsurv/corpus/dataset.hpp"

namespace odsurv::corpus {

enum class SplitStrategy { Stratified80_20, Random60_20_20 };

const char* to_string(SplitStrategy s);
SplitStrategy split_strategy_from_string(const std::string& s);

// Case uids per partition, each in input order. Stratified 80/20 leaves
// validation empty: model selection happens by cross-validation on train.
struct DatasetSplit {
    SplitStrategy strategy = SplitStrategy::Random60_20_20;
    std::uint64_t seed = 0;
    std::optional<std::string> target_class;
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;

    // sha256 over the sorted test ids.
    std::string test_fingerprint() const;

    nlohmann::ordered_json to_json() const;
    static DatasetSplit from_json(const nlohmann::json& j);
};

DatasetSplit make_splits(std::span<const LabeledCase> cases, SplitStrategy strategy, std::uint64_t seed,
                         const std::optional<std::string>& target_class, const LabelSchema& schema);

// Cases of `all` whose uid is listed in `ids`, in the order of `ids`.
std::vector<LabeledCase> select_cases(std::span<const LabeledCase> all, std::span<const std::string> ids);

}  // namespace odsurv::corpus
