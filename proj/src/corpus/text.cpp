#include "odsurv/corpus/text.hpp"

#include <cctype>
#include <fstream>

#include "odsurv/common/error.hpp"
#include "odsurv/corpus/record.hpp"

namespace odsurv::corpus {

const StopList& default_stop_list() {
    static const StopList list = {
        "a",        "about",   "above",   "after",    "again",   "against",    "ain",      "all",     "am",
        "an",       "and",     "any",     "are",      "aren",    "aren't",     "as",       "at",      "be",
        "because",  "been",    "before",  "being",    "below",   "between",    "both",     "but",     "by",
        "can",      "couldn",  "couldn't", "d",       "did",     "didn",       "didn't",   "do",      "does",
        "doesn",    "doesn't", "doing",   "don",      "don't",   "down",       "during",   "each",    "few",
        "for",      "from",    "further", "had",      "hadn",    "hadn't",     "has",      "hasn",    "hasn't",
        "have",     "haven",   "haven't", "having",   "he",      "her",        "here",     "hers",    "herself",
        "him",      "himself", "his",     "how",      "i",       "if",         "in",       "into",    "is",
        "isn",      "isn't",   "it",      "it's",     "its",     "itself",     "just",     "ll",      "m",
        "ma",       "me",      "mightn",  "mightn't", "more",    "most",       "mustn",    "mustn't", "my",
        "myself",   "needn",   "needn't", "no",       "nor",     "not",        "now",      "o",       "of",
        "off",      "on",      "once",    "only",     "or",      "other",      "our",      "ours",    "ourselves",
        "out",      "over",    "own",     "re",       "s",       "same",       "shan",     "shan't",  "she",
        "she's",    "should",  "should've", "shouldn", "shouldn't", "so",       "some",     "such",    "t",
        "than",     "that",    "that'll", "the",      "their",   "theirs",     "them",     "themselves", "then",
        "there",    "these",   "they",    "this",     "those",   "through",    "to",       "too",     "under",
        "until",    "up",      "ve",      "very",     "was",     "wasn",       "wasn't",   "we",      "were",
        "weren",    "weren't", "what",    "when",     "where",   "which",      "while",    "who",     "whom",
        "why",      "will",    "with",    "won",      "won't",   "wouldn",     "wouldn't", "y",       "you",
        "you'd",    "you'll",  "you're",  "you've",   "your",    "yours",      "yourself", "yourselves",
    };
    return list;
}

const StopList& protected_terms() {
    static const StopList terms = {
        "alcohol",       "ethanol",       "heroin",         "fentanyl",       "cocaine",       "methamphetamine",
        "amphetamine",   "opioid",        "opioids",        "opiate",         "opiates",       "morphine",
        "oxycodone",     "hydrocodone",   "methadone",      "buprenorphine",  "tramadol",      "codeine",
        "benzodiazepine", "benzodiazepines", "alprazolam",  "diazepam",       "clonazepam",    "lorazepam",
        "etizolam",      "flualprazolam", "xylazine",       "mdma",           "ecstasy",       "meth",
        "drug",          "drugs",
    };
    return terms;
}

StopList load_stop_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open stop list '" + path + "'");
    StopList out;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        std::string w(t);
        for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.insert(std::move(w));
    }
    return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

namespace {

std::string_view strip_punct(std::string_view tok) {
    auto is_p = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) && c != '\''; };
    while (!tok.empty() && is_p(tok.front())) tok.remove_prefix(1);
    while (!tok.empty() && is_p(tok.back())) tok.remove_suffix(1);
    return tok;
}

}  // namespace

std::string normalize_text(std::string_view raw, const StopList& stop_list) {
    std::string lowered(raw);
    for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::string out;
    for (const auto& tok : split_whitespace(lowered)) {
        const auto core = strip_punct(tok);
        if (!core.empty() && stop_list.contains(core) && !protected_terms().contains(core)) continue;
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

}  // namespace odsurv::corpus
