#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "valign/error.hpp"

namespace valign::teacher {

enum class Role { system, user, assistant };

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

std::string to_string(Role r);
Role role_from_string(std::string_view s);

enum class DecodeMode { greedy, nucleus };

struct DecodeParams {
    DecodeMode mode = DecodeMode::nucleus;
    double temperature = 1.0;
    double top_p = 0.9;
    int max_tokens = 1024;
    std::optional<std::int64_t> seed;

    static DecodeParams greedy(int max_tokens = 1024);
    static DecodeParams nucleus(double temperature = 1.0, double top_p = 0.9, int max_tokens = 1024);

    /// Temperature actually sent: 0 for greedy decoding.
    double effective_temperature() const { return mode == DecodeMode::greedy ? 0.0 : temperature; }
    void validate() const;
};

struct RetryPolicy {
    int max_attempts = 4;
    int base_backoff_ms = 500;
};

/// Delay before retry number `retry` (1-based): base * 2^(retry-1). No jitter.
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry);

struct TeacherConfig {
    std::string base_url = "http://127.0.0.1:8000";
    std::string model_id = "mistralai/Mixtral-8x7B-Instruct-v0.1";
    std::string embedding_model_id;
    std::string api_key_env = "OPENAI_API_KEY";
    int max_concurrency = 4;
    RetryPolicy retry;
    std::filesystem::path cache_dir; ///< empty: in-memory cache only
    int timeout_s = 120;

    void validate() const;
};

enum class FailureKind { transport, http_status, retries_exhausted, bad_response, empty_batch };

class TeacherError : public Error {
public:
    TeacherError(FailureKind kind, std::string message, std::string request_hash = {}, int status = 0,
                 int attempts = 0)
        : Error(std::move(message)), kind_(kind), request_hash_(std::move(request_hash)), status_(status),
          attempts_(attempts) {}

    FailureKind kind() const noexcept { return kind_; }
    const std::string& request_hash() const noexcept { return request_hash_; }
    int status() const noexcept { return status_; }
    int attempts() const noexcept { return attempts_; }

private:
    FailureKind kind_;
    std::string request_hash_;
    int status_;
    int attempts_;
};

/// Raw HTTP exchange. status == 0 means the request never got a response.
struct HttpResponse {
    int status = 0;
    std::string body;
    std::string transport_error;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

class Transport {
public:
    virtual ~Transport() = default;
    /// `path` is relative to the configured base URL, e.g. "/v1/chat/completions".
    virtual HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) = 0;
};

/// cpp-httplib backed transport. Safe for concurrent use (one connection per call).
class HttpTransport : public Transport {
public:
    HttpTransport(std::string base_url, int timeout_s);
    HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) override;

private:
    std::string scheme_host_port_;
    std::string path_prefix_;
    int timeout_s_;
};

struct Usage {
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
    std::uint64_t network_requests = 0; ///< HTTP attempts, including retries
    std::uint64_t cache_hits = 0;
    std::uint64_t failures = 0;

    nlohmann::json to_json() const;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    DecodeParams params;
};

/// Outcome of one request in a batch. Exactly one of text/error is meaningful.
struct ChatResult {
    std::string text;
    std::optional<TeacherError> error;
    bool ok() const { return !error.has_value(); }
};

/// Counting semaphore with a runtime ceiling.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int limit) : available_(limit) {}
    void acquire();
    void release();

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int available_;
};

/// OpenAI-compatible chat-completions / embeddings client with content-addressed
/// caching, bounded concurrency and deterministic exponential backoff.
class TeacherClient {
public:
    explicit TeacherClient(TeacherConfig cfg, std::shared_ptr<Transport> transport = nullptr);

    std::string chat_complete(const std::vector<ChatMessage>& messages, const DecodeParams& params);

    /// Runs requests with at most max_concurrency in flight; results are returned in
    /// submission order. Failures are reported per request, never thrown.
    std::vector<ChatResult> chat_complete_batch(const std::vector<ChatRequest>& requests);

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);

    nlohmann::json chat_request_body(const std::vector<ChatMessage>& messages, const DecodeParams& params) const;
    std::string request_hash(const std::vector<ChatMessage>& messages, const DecodeParams& params) const;

    Usage usage() const;
    const TeacherConfig& config() const { return cfg_; }

    /// Test hook: replaces the sleep used between retries.
    void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper);

private:
    struct Exchange {
        std::string text;
        std::uint64_t prompt_tokens = 0;
        std::uint64_t completion_tokens = 0;
    };

    std::string post_with_retry(const std::string& path, const std::string& body, const std::string& hash);
    std::string cached_call(const std::string& hash, const std::function<std::string()>& produce);
    std::optional<std::string> read_disk_cache(const std::string& hash) const;
    void write_disk_cache(const std::string& hash, const nlohmann::json& request, const std::string& payload) const;

    TeacherConfig cfg_;
    std::shared_ptr<Transport> transport_;
    std::function<void(std::chrono::milliseconds)> sleeper_;
    ConcurrencyGate gate_;

    mutable std::mutex mu_;
    std::map<std::string, std::shared_future<std::string>> memo_;
    Usage usage_;
};

/// Parses a chat-completions response body into (text, prompt_tokens, completion_tokens).
std::tuple<std::string, std::uint64_t, std::uint64_t> parse_chat_response(const std::string& body);

/// Parses an embeddings response body; vectors ordered by their "index" field.
std::vector<std::vector<double>> parse_embedding_response(const std::string& body);

} // namespace valign::teacher
