#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxnav/core.hpp"

namespace ctxnav {

struct ContentPart {
    enum class Kind { text, image };
    Kind kind = Kind::text;
    std::string text;         // text parts
    std::string image_data;   // base64 image bytes
    std::string image_uri;    // where the bytes came from

    static ContentPart make_text(std::string text);
    // Reads the media and base64-encodes it.
    static ContentPart make_image(const MediaRef& ref);
};

struct ChatMessage {
    std::string role = "user";
    std::vector<ContentPart> content;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;

    static ChatRequest user(std::vector<ContentPart> parts);
    // Concatenation of every text part, separated by newlines.
    std::string joined_text() const;
};

struct ChatResponse {
    std::string text;
    std::uint64_t total_tokens = 0;
};

// Chat-completions wire format. `pass_image_paths` emits local paths
// instead of base64 payloads for endpoints that share our filesystem.
nlohmann::json to_wire(const ChatRequest& request, std::string_view model,
                       bool pass_image_paths = false);
ChatResponse response_from_wire(const nlohmann::json& body);

// One way of answering a chat request. Implementations must be safe to call
// from several threads at once.
class Transport {
public:
    virtual ~Transport() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

struct EndpointConfig {
    std::string base_url;             // e.g. http://127.0.0.1:8080/v1
    std::string model_name;
    std::string auth_token_env_var;   // empty: no Authorization header
    int timeout_ms = 30000;
    int max_retries = 3;
    int max_concurrency = 4;
    int backoff_base_ms = 250;
    bool pass_image_paths = false;
};

// POSTs to <base_url>/chat/completions, retrying 429 and 5xx responses and
// connection failures with exponential backoff.
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(EndpointConfig config);
    ChatResponse complete(const ChatRequest& request) override;

private:
    EndpointConfig config_;
};

// Ground truth a deterministic oracle may consult. Benchmark generators fill
// it; real corpora have none.
struct OracleFacts {
    std::string task_tag;
    std::string style_tag;
    std::string answer;
    int difficulty = 0;   // on-task shots a query needs to be answered
};

class GroundTruth {
public:
    void add_sample(const Sample& sample);
    void add_query(const std::string& question, OracleFacts facts);

    const OracleFacts* by_question(std::string_view question) const;
    const OracleFacts* by_answer(std::string_view answer) const;
    std::size_t size() const noexcept { return by_question_.size(); }

    nlohmann::json to_json() const;
    static GroundTruth from_json(const nlohmann::json& j);
    static GroundTruth load(const std::filesystem::path& path);

private:
    std::map<std::string, OracleFacts, std::less<>> by_question_;
    std::map<std::string, OracleFacts, std::less<>> by_answer_;
};

struct OracleConfig {
    std::uint64_t seed = 0;
    // "bench" answers every role from ground truth; "malformed:<p>" also
    // corrupts a fraction p of toolchain replies.
    std::string rule_set = "bench";
    double task_share_threshold = 0.75;
    double style_share_threshold = 0.5;
    double min_shot_fraction = 0.75;
};

// Rule-based stand-in for every model role. Recognizes the role from the
// rendered prompt and answers deterministically: same request, same reply.
class OracleTransport final : public Transport {
public:
    OracleTransport(std::shared_ptr<const GroundTruth> truth, OracleConfig config = {});
    ChatResponse complete(const ChatRequest& request) override;

private:
    std::string answer_coherence(const std::string& text) const;
    std::string answer_structural(const std::string& text) const;
    std::string answer_embedding(const std::string& text) const;
    std::string answer_orchestration(const std::string& text) const;
    std::string answer_icl(const std::string& text) const;

    std::shared_ptr<const GroundTruth> truth_;
    OracleConfig config_;
    double malformed_rate_ = 0.0;
};

// The handle every model role goes through. Bounds in-flight requests; all
// behaviour differences between implementations live in the response text.
class ModelPolicy {
public:
    ModelPolicy(std::shared_ptr<Transport> transport, int max_concurrency = 4);

    ChatResponse complete(const ChatRequest& request) const;

    int max_concurrency() const noexcept { return max_concurrency_; }
    int peak_in_flight() const noexcept { return state_->peak.load(); }
    std::uint64_t calls() const noexcept { return state_->calls.load(); }

private:
    struct State {
        explicit State(int n) : slots(n) {}
        std::counting_semaphore<> slots;
        std::atomic<int> in_flight{0};
        std::atomic<int> peak{0};
        std::atomic<std::uint64_t> calls{0};
    };
    std::shared_ptr<Transport> transport_;
    int max_concurrency_;
    std::shared_ptr<State> state_;
};

// Number of whitespace-separated tokens; used as a usage estimate where the
// transport reports none.
std::uint64_t rough_token_count(std::string_view text);

}  // namespace ctxnav
