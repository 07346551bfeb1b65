#include <httplib.h>

#include <cmath>

#include "odsurv/common/error.hpp"
#include "odsurv/llm/harness.hpp"

namespace odsurv::llm {

HttpClient::HttpClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.base_url.rfind("http://", 0) != 0) throw ConfigError("base_url must start with http://");
}

std::string HttpClient::name() const { return cfg_.model.empty() ? cfg_.base_url : cfg_.model + "@" + cfg_.base_url; }

nlohmann::json HttpClient::post(const std::string& path, const nlohmann::json& body) const {
    // A client per call keeps concurrent requests independent.
    httplib::Client cli(cfg_.base_url);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    const auto res = cli.Post(path, body.dump(), "application/json");
    if (!res) throw TransportError("POST " + path + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw TransportError("POST " + path + " returned HTTP " + std::to_string(res->status));
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw TransportError("POST " + path + " returned invalid JSON: " + e.what());
    }
}

std::string HttpClient::generate(const GenerationRequest& request) {
    const auto j = post("/generate", {{"model", cfg_.model},
                                      {"prompt", request.prompt},
                                      {"max_tokens", request.max_tokens},
                                      {"temperature", request.temperature}});
    if (!j.contains("text") || !j.at("text").is_string()) throw TransportError("/generate response lacks 'text'");
    return j.at("text").get<std::string>();
}

double HttpClient::train(std::span<const SftExample> batch) {
    nlohmann::json examples = nlohmann::json::array();
    for (const auto& e : batch) examples.push_back({{"prompt", e.prompt}, {"target", e.target}});
    const auto j = post("/sft/train", {{"model", cfg_.model}, {"examples", examples}});
    if (!j.contains("loss") || !j.at("loss").is_number()) throw TransportError("/sft/train response lacks 'loss'");
    const double loss = j.at("loss").get<double>();
    if (!std::isfinite(loss)) throw TrainingError("server reported a non-finite training loss");
    return loss;
}

std::string HttpClient::finish_training() {
    const auto j = post("/sft/finish", {{"model", cfg_.model}});
    if (!j.contains("model") || !j.at("model").is_string()) throw TransportError("/sft/finish response lacks 'model'");
    return j.at("model").get<std::string>();
}

}  // namespace odsurv::llm
