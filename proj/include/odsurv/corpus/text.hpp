#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace odsurv::corpus {

using StopList = std::set<std::string, std::less<>>;

// Version tag recorded in run manifests alongside the list itself.
inline constexpr const char* kDefaultStopListVersion = "odsurv-en-1";

// English function words. Drug vocabulary never appears here and
// normalize_text refuses to drop protected terms even if a custom list has them.
const StopList& default_stop_list();
const StopList& protected_terms();

StopList load_stop_list(const std::string& path);

std::vector<std::string> split_whitespace(std::string_view text);

// Lowercases, drops stop-word tokens (compared with surrounding punctuation
// stripped), and rejoins the remaining tokens with single spaces. Idempotent.
std::string normalize_text(std::string_view raw, const StopList& stop_list = default_stop_list());

}  // namespace odsurv::corpus
