#include "valign/teacher.hpp"

#include <atomic>
#include <thread>

#include <spdlog/spdlog.h>

#include "valign/text.hpp"

namespace valign::teacher {

std::string to_string(Role r) {
    switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw InputError("unknown chat role: " + std::string(s));
}

DecodeParams DecodeParams::greedy(int max_tokens) {
    DecodeParams p;
    p.mode = DecodeMode::greedy;
    p.temperature = 0.0;
    p.top_p = 1.0;
    p.max_tokens = max_tokens;
    return p;
}

DecodeParams DecodeParams::nucleus(double temperature, double top_p, int max_tokens) {
    DecodeParams p;
    p.mode = DecodeMode::nucleus;
    p.temperature = temperature;
    p.top_p = top_p;
    p.max_tokens = max_tokens;
    return p;
}

void DecodeParams::validate() const {
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be non-negative");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (max_tokens <= 0) throw ConfigError("max_tokens must be positive");
    if (mode == DecodeMode::nucleus && !(top_p < 1.0 || temperature > 0.0)) {
        throw ConfigError("nucleus decoding needs top_p < 1 or temperature > 0");
    }
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry) {
    const int shift = std::min(retry - 1, 20);
    return std::chrono::milliseconds(static_cast<std::int64_t>(policy.base_backoff_ms) << shift);
}

void TeacherConfig::validate() const {
    if (base_url.empty()) throw ConfigError("teacher base_url is empty");
    if (model_id.empty()) throw ConfigError("teacher model_id is empty");
    if (max_concurrency < 1) throw ConfigError("teacher max_concurrency must be >= 1");
    if (retry.max_attempts < 1) throw ConfigError("teacher retry.max_attempts must be >= 1");
    if (retry.base_backoff_ms < 0) throw ConfigError("teacher retry.base_backoff_ms must be >= 0");
}

nlohmann::json Usage::to_json() const {
    return {{"prompt_tokens", prompt_tokens},
            {"completion_tokens", completion_tokens},
            {"network_requests", network_requests},
            {"cache_hits", cache_hits},
            {"failures", failures}};
}

void ConcurrencyGate::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
}

void ConcurrencyGate::release() {
    {
        std::lock_guard lock(mu_);
        ++available_;
    }
    cv_.notify_one();
}

std::tuple<std::string, std::uint64_t, std::uint64_t> parse_chat_response(const std::string& body) {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw TeacherError(FailureKind::bad_response, "chat response is not JSON");
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw TeacherError(FailureKind::bad_response, "chat response has no choices");
    }
    const auto& choice = j["choices"][0];
    std::string text;
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string()) {
        text = choice["message"]["content"].get<std::string>();
    } else if (choice.contains("text") && choice["text"].is_string()) {
        text = choice["text"].get<std::string>();
    } else {
        throw TeacherError(FailureKind::bad_response, "chat response choice has no content");
    }
    std::uint64_t prompt = 0;
    std::uint64_t completion = 0;
    if (j.contains("usage") && j["usage"].is_object()) {
        prompt = j["usage"].value("prompt_tokens", std::uint64_t{0});
        completion = j["usage"].value("completion_tokens", std::uint64_t{0});
    }
    return {std::move(text), prompt, completion};
}

std::vector<std::vector<double>> parse_embedding_response(const std::string& body) {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.contains("data") || !j["data"].is_array()) {
        throw TeacherError(FailureKind::bad_response, "embedding response has no data array");
    }
    std::vector<std::pair<std::size_t, std::vector<double>>> rows;
    std::size_t pos = 0;
    for (const auto& item : j["data"]) {
        if (!item.contains("embedding")) throw TeacherError(FailureKind::bad_response, "embedding item without vector");
        rows.emplace_back(item.value("index", pos), item["embedding"].get<std::vector<double>>());
        ++pos;
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (auto& r : rows) out.push_back(std::move(r.second));
    return out;
}

TeacherClient::TeacherClient(TeacherConfig cfg, std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }), gate_(cfg_.max_concurrency) {
    cfg_.validate();
    if (!transport_) transport_ = std::make_shared<HttpTransport>(cfg_.base_url, cfg_.timeout_s);
}

void TeacherClient::set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) {
    sleeper_ = std::move(sleeper);
}

Usage TeacherClient::usage() const {
    std::lock_guard lock(mu_);
    return usage_;
}

nlohmann::json TeacherClient::chat_request_body(const std::vector<ChatMessage>& messages,
                                                const DecodeParams& params) const {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    nlohmann::json body{{"model", cfg_.model_id},
                        {"messages", std::move(msgs)},
                        {"max_tokens", params.max_tokens},
                        {"temperature", params.effective_temperature()}};
    if (params.mode == DecodeMode::nucleus) body["top_p"] = params.top_p;
    if (params.seed) body["seed"] = *params.seed;
    return body;
}

std::string TeacherClient::request_hash(const std::vector<ChatMessage>& messages, const DecodeParams& params) const {
    // The request body already carries model, effective params and messages; object keys are sorted on dump.
    return text::sha256_hex("chat\n" + chat_request_body(messages, params).dump());
}

std::optional<std::string> TeacherClient::read_disk_cache(const std::string& hash) const {
    if (cfg_.cache_dir.empty()) return std::nullopt;
    const auto file = cfg_.cache_dir / hash.substr(0, 2) / (hash + ".json");
    if (!std::filesystem::exists(file)) return std::nullopt;
    const auto j = nlohmann::json::parse(text::read_file(file), nullptr, false);
    if (j.is_discarded() || !j.contains("payload")) {
        spdlog::warn("ignoring corrupt cache entry {}", file.string());
        return std::nullopt;
    }
    return j["payload"].get<std::string>();
}

void TeacherClient::write_disk_cache(const std::string& hash, const nlohmann::json& request,
                                     const std::string& payload) const {
    if (cfg_.cache_dir.empty()) return;
    const auto file = cfg_.cache_dir / hash.substr(0, 2) / (hash + ".json");
    const nlohmann::json blob{{"hash", hash}, {"request", request}, {"payload", payload}};
    text::write_file(file, blob.dump(2));
}

std::string TeacherClient::cached_call(const std::string& hash, const std::function<std::string()>& produce) {
    std::promise<std::string> promise;
    {
        std::unique_lock lock(mu_);
        if (auto it = memo_.find(hash); it != memo_.end()) {
            auto fut = it->second;
            ++usage_.cache_hits;
            lock.unlock();
            return fut.get(); // may wait for an identical in-flight request
        }
        memo_.emplace(hash, promise.get_future().share());
    }
    try {
        std::string payload;
        if (auto hit = read_disk_cache(hash)) {
            std::lock_guard lock(mu_);
            ++usage_.cache_hits;
            payload = std::move(*hit);
        } else {
            payload = produce();
        }
        promise.set_value(payload);
        return payload;
    } catch (...) {
        {
            std::lock_guard lock(mu_);
            memo_.erase(hash);
            ++usage_.failures;
        }
        promise.set_exception(std::current_exception());
        throw;
    }
}

std::string TeacherClient::post_with_retry(const std::string& path, const std::string& body, const std::string& hash) {
    Headers headers{{"Content-Type", "application/json"}, {"X-Request-Id", hash}};
    if (!cfg_.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
            headers.emplace_back("Authorization", std::string("Bearer ") + key);
        }
    }
    const int max_attempts = cfg_.retry.max_attempts;
    std::string last_error;
    int last_status = 0;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        HttpResponse resp;
        gate_.acquire();
        try {
            resp = transport_->post(path, body, headers);
        } catch (const std::exception& e) {
            resp.status = 0;
            resp.transport_error = e.what();
        }
        gate_.release();
        {
            std::lock_guard lock(mu_);
            ++usage_.network_requests;
        }
        if (resp.status >= 200 && resp.status < 300) return resp.body;

        last_status = resp.status;
        const bool retryable = resp.status == 0 || resp.status == 429 || resp.status >= 500;
        last_error = resp.status == 0 ? "transport error: " + resp.transport_error
                                      : "HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200);
        if (!retryable) {
            throw TeacherError(FailureKind::http_status, last_error, hash, resp.status, attempt);
        }
        if (attempt < max_attempts) {
            const auto delay = backoff_delay(cfg_.retry, attempt);
            spdlog::debug("teacher request {} failed ({}), retry {} in {} ms", hash.substr(0, 12), last_error, attempt,
                          delay.count());
            sleeper_(delay);
        }
    }
    throw TeacherError(FailureKind::retries_exhausted,
                       "teacher request " + hash + " failed after " + std::to_string(max_attempts) +
                           " attempts: " + last_error,
                       hash, last_status, max_attempts);
}

std::string TeacherClient::chat_complete(const std::vector<ChatMessage>& messages, const DecodeParams& params) {
    params.validate();
    for (const auto& m : messages) {
        if (m.role != Role::assistant && m.content.empty()) {
            throw InputError("chat message content must be non-empty for user/system roles");
        }
    }
    const auto body = chat_request_body(messages, params);
    const auto hash = request_hash(messages, params);
    return cached_call(hash, [&] {
        const auto raw = post_with_retry("/v1/chat/completions", body.dump(), hash);
        auto [text, prompt_tokens, completion_tokens] = parse_chat_response(raw);
        {
            std::lock_guard lock(mu_);
            usage_.prompt_tokens += prompt_tokens;
            usage_.completion_tokens += completion_tokens;
        }
        write_disk_cache(hash, body, text);
        return text;
    });
}

std::vector<ChatResult> TeacherClient::chat_complete_batch(const std::vector<ChatRequest>& requests) {
    std::vector<ChatResult> results(requests.size());
    if (requests.empty()) return results;

    auto run_one = [&](std::size_t i) {
        try {
            results[i].text = chat_complete(requests[i].messages, requests[i].params);
        } catch (const TeacherError& e) {
            results[i].error = e;
        } catch (const std::exception& e) {
            results[i].error = TeacherError(FailureKind::bad_response, e.what());
        }
    };

    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_concurrency), requests.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < requests.size(); ++i) run_one(i);
        return results;
    }
    // Each slot i is written by exactly one worker; submission index is the correlation id.
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < requests.size(); i = next++) run_one(i);
        });
    }
    pool.clear();
    return results;
}

std::vector<std::vector<double>> TeacherClient::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw TeacherError(FailureKind::empty_batch, "empty batch");
    const std::string model = cfg_.embedding_model_id.empty() ? cfg_.model_id : cfg_.embedding_model_id;
    const nlohmann::json body{{"model", model}, {"input", texts}};
    const auto hash = text::sha256_hex("embed\n" + body.dump());
    const auto payload = cached_call(hash, [&] {
        const auto raw = post_with_retry("/v1/embeddings", body.dump(), hash);
        const auto vectors = parse_embedding_response(raw);
        const std::string encoded = nlohmann::json(vectors).dump();
        write_disk_cache(hash, body, encoded);
        return encoded;
    });
    auto vectors = nlohmann::json::parse(payload).get<std::vector<std::vector<double>>>();
    if (vectors.size() != texts.size()) {
        throw TeacherError(FailureKind::bad_response, "embedding count does not match input count", hash);
    }
    for (const auto& v : vectors) {
        if (v.empty() || v.size() != vectors.front().size()) {
            throw TeacherError(FailureKind::bad_response, "embedding vectors have non-uniform dimensionality", hash);
        }
    }
    return vectors;
}

} // namespace valign::teacher
