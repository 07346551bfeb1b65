#include "odsurv/corpus/split.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "odsurv/common/error.hpp"
#include "odsurv/common/hash.hpp"
#include "odsurv/common/rng.hpp"

namespace odsurv::corpus {

const char* to_string(SplitStrategy s) {
    return s == SplitStrategy::Stratified80_20 ? "stratified_80_20" : "random_60_20_20";
}

SplitStrategy split_strategy_from_string(const std::string& s) {
    if (s == "stratified_80_20") return SplitStrategy::Stratified80_20;
    if (s == "random_60_20_20") return SplitStrategy::Random60_20_20;
    throw ConfigError("unknown split strategy '" + s + "'");
}

std::string DatasetSplit::test_fingerprint() const {
    auto ids = test;
    std::sort(ids.begin(), ids.end());
    std::string buf;
    for (const auto& id : ids) buf += id + "\n";
    return sha256_hex(buf);
}

nlohmann::ordered_json DatasetSplit::to_json() const {
    nlohmann::ordered_json j;
    j["strategy"] = to_string(strategy);
    j["seed"] = seed;
    j["target_class"] = target_class ? nlohmann::ordered_json(*target_class) : nlohmann::ordered_json();
    j["test_fingerprint"] = test_fingerprint();
    j["train"] = train;
    j["validation"] = validation;
    j["test"] = test;
    return j;
}

DatasetSplit DatasetSplit::from_json(const nlohmann::json& j) {
    DatasetSplit s;
    s.strategy = split_strategy_from_string(j.at("strategy").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("target_class") && !j.at("target_class").is_null())
        s.target_class = j.at("target_class").get<std::string>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.validation = j.at("validation").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
}

namespace {

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

}  // namespace

DatasetSplit make_splits(std::span<const LabeledCase> cases, SplitStrategy strategy, std::uint64_t seed,
                         const std::optional<std::string>& target_class, const LabelSchema& schema) {
    DatasetSplit out;
    out.strategy = strategy;
    out.seed = seed;
    out.target_class = target_class;
    Engine eng(stream_seed(seed, 0x5E17));

    // 0 = train, 1 = validation, 2 = test
    std::vector<int> part(cases.size(), 0);
    if (strategy == SplitStrategy::Random60_20_20) {
        if (target_class) throw ConfigError("random_60_20_20 does not take a target class");
        std::vector<std::size_t> order(cases.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        portable_shuffle(order, eng);
        const std::size_t n = cases.size();
        const std::size_t n_test = round_half_up(0.2 * static_cast<double>(n));
        const std::size_t n_val = round_half_up(0.2 * static_cast<double>(n));
        for (std::size_t k = 0; k < n; ++k) part[order[k]] = k < n_test ? 2 : (k < n_test + n_val ? 1 : 0);
    } else {
        if (!target_class) throw ConfigError("stratified_80_20 needs a target class");
        const std::size_t c = schema.require_index(*target_class);
        std::vector<std::size_t> pos, neg;
        for (std::size_t i = 0; i < cases.size(); ++i) (cases[i].gold.at(c) ? pos : neg).push_back(i);
        if (pos.size() < 2)
            throw SplitError("cannot stratify on '" + *target_class + "': only " + std::to_string(pos.size()) +
                             " positive cases");
        portable_shuffle(pos, eng);
        portable_shuffle(neg, eng);
        const std::size_t tp = round_half_up(0.2 * static_cast<double>(pos.size()));
        const std::size_t tn = round_half_up(0.2 * static_cast<double>(neg.size()));
        for (std::size_t k = 0; k < tp; ++k) part[pos[k]] = 2;
        for (std::size_t k = 0; k < tn; ++k) part[neg[k]] = 2;
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
        auto& dst = part[i] == 0 ? out.train : (part[i] == 1 ? out.validation : out.test);
        dst.push_back(cases[i].id());
    }
    return out;
}

std::vector<LabeledCase> select_cases(std::span<const LabeledCase> all, std::span<const std::string> ids) {
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) index.emplace(all[i].id(), i);
    std::vector<LabeledCase> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) throw ValidationError("split references unknown case '" + id + "'");
        out.push_back(all[it->second]);
    }
    return out;
}

}  // namespace odsurv::corpus
