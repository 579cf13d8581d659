#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "ctxnav/embed.hpp"
#include "ctxnav/errors.hpp"
#include "ctxnav/policy.hpp"

namespace ctxnav {

namespace {

struct Endpoint {
    std::string origin;   // scheme://host:port
    std::string path;     // base path, no trailing slash
};

Endpoint split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + url);
    auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.origin = url.substr(0, slash);
    e.path = slash == std::string::npos ? "" : url.substr(slash);
    while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
    return e;
}

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

// POSTs `body` with retries; returns the parsed response body. Throws
// TransportError carrying every attempt's status once retries run out.
nlohmann::json post_with_retry(const std::string& base_url, const std::string& suffix,
                               const nlohmann::json& body, const std::string& auth_env,
                               int timeout_ms, int max_retries, int backoff_base_ms) {
    Endpoint ep = split_url(base_url);
    httplib::Client client(ep.origin);
    client.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(timeout_ms));
    client.set_write_timeout(std::chrono::milliseconds(timeout_ms));
    httplib::Headers headers;
    if (!auth_env.empty()) {
        if (const char* token = std::getenv(auth_env.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    const std::string payload = body.dump();
    std::vector<int> statuses;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long>(backoff_base_ms) << (attempt - 1)));
        }
        auto res = client.Post(ep.path + suffix, headers, payload, "application/json");
        int status = res ? res->status : 0;
        statuses.push_back(status);
        if (res && status >= 200 && status < 300) {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw TransportError(std::string("unparseable response body: ") + e.what(),
                                     statuses);
            }
        }
        if (!retryable(status)) break;
    }
    std::string chain;
    for (int s : statuses) chain += (chain.empty() ? "" : ",") + std::to_string(s);
    throw TransportError("request to " + base_url + suffix + " failed (statuses " + chain + ")",
                         statuses);
}

}  // namespace

HttpTransport::HttpTransport(EndpointConfig config) : config_(std::move(config)) {
    if (config_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    split_url(config_.base_url);
}

ChatResponse HttpTransport::complete(const ChatRequest& request) {
    auto body = to_wire(request, config_.model_name, config_.pass_image_paths);
    auto reply = post_with_retry(config_.base_url, "/chat/completions", body,
                                 config_.auth_token_env_var, config_.timeout_ms,
                                 config_.max_retries, config_.backoff_base_ms);
    return response_from_wire(reply);
}

std::vector<std::vector<float>> HttpEmbeddingBackend::request(const std::string& model,
                                                              const nlohmann::json& inputs) const {
    nlohmann::json body{{"model", model}, {"input", inputs}};
    // Embedding retries are driven by embed_samples; one attempt here.
    auto reply = post_with_retry(config_.base_url, "/embeddings", body, config_.auth_token_env_var,
                                 config_.timeout_ms, 0, config_.backoff_base_ms);
    std::vector<std::vector<float>> out;
    try {
        for (const auto& item : reply.at("data"))
            out.push_back(item.at("embedding").get<std::vector<float>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed embedding response: ") + e.what());
    }
    if (out.size() != inputs.size())
        throw FormatError("embedding response has " + std::to_string(out.size()) +
                          " vectors for " + std::to_string(inputs.size()) + " inputs");
    return out;
}

}  // namespace ctxnav
