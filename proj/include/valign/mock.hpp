#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "valign/teacher.hpp"

// Offline stand-ins for an OpenAI-compatible teacher: an in-process transport
// and a loopback HTTP server sharing the same responder signature.

namespace valign::mock {

struct MockReply {
    int status = 200;
    std::string content;                                  ///< chat completion text
    std::optional<std::vector<std::vector<double>>> embeddings;
    std::optional<std::string> raw_body;                  ///< sent verbatim when set
};

/// `path` is "/v1/chat/completions" or "/v1/embeddings"; `request` is the parsed body.
using Responder = std::function<MockReply(const std::string& path, const nlohmann::json& request)>;

std::string chat_completion_body(const std::string& content, const std::string& model);
std::string embedding_body(const std::vector<std::vector<double>>& vectors, const std::string& model);
std::string render_reply(const MockReply& reply, const std::string& path, const nlohmann::json& request);

/// Content of the last user message in a chat request ("" if none).
std::string last_user_message(const nlohmann::json& request);

/// Echoes the last user message; unit basis vectors for embeddings.
MockReply echo_responder(const std::string& path, const nlohmann::json& request);

/// Deterministic synthetic teacher that understands the built-in templates:
/// questions, grounded answers, preference triples, value-filter verdicts,
/// pairwise verdicts (prefers the longer response) and hashed bag-of-words embeddings.
MockReply fixture_responder(const std::string& path, const nlohmann::json& request);

struct RecordedRequest {
    std::string path;
    nlohmann::json body;
};

/// In-process transport; no sockets involved.
class ScriptedTransport : public teacher::Transport {
public:
    explicit ScriptedTransport(Responder responder) : responder_(std::move(responder)) {}

    teacher::HttpResponse post(const std::string& path, const std::string& body,
                               const teacher::Headers& headers) override;

    std::vector<RecordedRequest> requests() const;
    std::size_t request_count() const;
    std::size_t max_in_flight() const { return max_in_flight_.load(); }

private:
    Responder responder_;
    mutable std::mutex mu_;
    std::vector<RecordedRequest> log_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
};

/// Loopback HTTP server speaking the chat-completions and embeddings endpoints.
class MockTeacherServer {
public:
    explicit MockTeacherServer(Responder responder = echo_responder);
    ~MockTeacherServer();
    MockTeacherServer(const MockTeacherServer&) = delete;
    MockTeacherServer& operator=(const MockTeacherServer&) = delete;

    /// Binds to `port` (0 = any free port) on `host` and serves in a background thread.
    void start(const std::string& host = "127.0.0.1", int port = 0);
    /// Serves on the calling thread until stop() is called from elsewhere.
    void listen_blocking(const std::string& host, int port);
    void stop();

    int port() const { return port_; }
    std::string base_url() const;
    std::vector<RecordedRequest> requests() const;
    std::size_t request_count() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    Responder responder_;
    std::string host_ = "127.0.0.1";
    int port_ = 0;
    std::thread thread_;
    mutable std::mutex mu_;
    std::vector<RecordedRequest> log_;
};

} // namespace valign::mock
