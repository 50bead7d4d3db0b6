#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "valign/mock.hpp"
#include "valign/teacher.hpp"

using namespace valign;
using namespace valign::teacher;
namespace fs = std::filesystem;

namespace {

mock::MockReply reply(int status, std::string content) {
    mock::MockReply r;
    r.status = status;
    r.content = std::move(content);
    return r;
}

std::vector<ChatMessage> user(const std::string& content) { return {{Role::user, content}}; }

TeacherConfig quick_config() {
    TeacherConfig cfg;
    cfg.model_id = "m";
    cfg.api_key_env = "VALIGN_TEST_KEY";
    cfg.retry.base_backoff_ms = 10;
    return cfg;
}

} // namespace

TEST_CASE("decode params validation") {
    CHECK_NOTHROW(DecodeParams::greedy().validate());
    CHECK_NOTHROW(DecodeParams::nucleus(1.0, 0.9).validate());
    CHECK_THROWS_AS(DecodeParams::nucleus(1.0, 0.0).validate(), ConfigError);
    CHECK_THROWS_AS(DecodeParams::nucleus(1.0, 1.5).validate(), ConfigError);
    CHECK_THROWS_AS(DecodeParams::nucleus(-1.0, 0.9).validate(), ConfigError);
    CHECK_THROWS_AS(DecodeParams::nucleus(1.0, 0.9, 0).validate(), ConfigError);
    CHECK(DecodeParams::greedy().effective_temperature() == 0.0);
}

TEST_CASE("backoff doubles without jitter") {
    RetryPolicy p{4, 500};
    CHECK(backoff_delay(p, 1).count() == 500);
    CHECK(backoff_delay(p, 2).count() == 1000);
    CHECK(backoff_delay(p, 3).count() == 2000);
}

TEST_CASE("request body and hash") {
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::echo_responder);
    TeacherClient client(quick_config(), transport);
    auto p = DecodeParams::nucleus(0.7, 0.9, 64);
    p.seed = 3;
    const auto body = client.chat_request_body(user("hi"), p);
    CHECK(body["model"] == "m");
    CHECK(body["temperature"] == 0.7);
    CHECK(body["top_p"] == 0.9);
    CHECK(body["max_tokens"] == 64);
    CHECK(body["seed"] == 3);
    CHECK(body["messages"][0]["role"] == "user");
    const auto g = client.chat_request_body(user("hi"), DecodeParams::greedy(64));
    CHECK(g["temperature"] == 0.0);
    CHECK_FALSE(g.contains("top_p"));

    CHECK(client.request_hash(user("hi"), p) == client.request_hash(user("hi"), p));
    CHECK(client.request_hash(user("hi"), p) != client.request_hash(user("hi!"), p));
    auto p2 = p;
    p2.seed = 4;
    CHECK(client.request_hash(user("hi"), p) != client.request_hash(user("hi"), p2));
    CHECK(client.request_hash(user("hi"), p).size() == 64);
}

TEST_CASE("identical requests hit the cache") {
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::echo_responder);
    TeacherClient client(quick_config(), transport);
    CHECK(client.chat_complete(user("ping"), DecodeParams::greedy()) == "ping");
    CHECK(client.chat_complete(user("ping"), DecodeParams::greedy()) == "ping");
    CHECK(transport->request_count() == 1);
    CHECK(client.usage().cache_hits == 1);
    CHECK(client.usage().network_requests == 1);
}

TEST_CASE("disk cache survives a new client") {
    const auto dir = fs::temp_directory_path() / "valign_teacher_cache";
    fs::remove_all(dir);
    auto cfg = quick_config();
    cfg.cache_dir = dir;
    {
        auto t = std::make_shared<mock::ScriptedTransport>(mock::echo_responder);
        TeacherClient c(cfg, t);
        c.chat_complete(user("persist me"), DecodeParams::greedy());
        CHECK(t->request_count() == 1);
    }
    auto t = std::make_shared<mock::ScriptedTransport>(mock::echo_responder);
    TeacherClient c(cfg, t);
    CHECK(c.chat_complete(user("persist me"), DecodeParams::greedy()) == "persist me");
    CHECK(t->request_count() == 0);
    fs::remove_all(dir);
}

TEST_CASE("transient failures are retried with backoff") {
    std::atomic<int> calls{0};
    auto transport = std::make_shared<mock::ScriptedTransport>([&](const std::string& path, const nlohmann::json& req) {
        const int n = ++calls;
        if (n == 1) return reply(503, "busy");
        if (n == 2) return reply(429, "slow down");
        return mock::echo_responder(path, req);
    });
    TeacherClient client(quick_config(), transport);
    std::vector<long> delays;
    client.set_sleeper([&](std::chrono::milliseconds d) { delays.push_back(static_cast<long>(d.count())); });
    CHECK(client.chat_complete(user("retry"), DecodeParams::greedy()) == "retry");
    CHECK(delays == std::vector<long>{10, 20});
    CHECK(client.usage().network_requests == 3);
}

TEST_CASE("retries are bounded and 4xx is not retried") {
    auto down = std::make_shared<mock::ScriptedTransport>(
        [](const std::string&, const nlohmann::json&) { return reply(500, "boom"); });
    TeacherClient client(quick_config(), down);
    client.set_sleeper([](std::chrono::milliseconds) {});
    try {
        client.chat_complete(user("x"), DecodeParams::greedy());
        FAIL("expected TeacherError");
    } catch (const TeacherError& e) {
        CHECK(e.kind() == FailureKind::retries_exhausted);
        CHECK(e.attempts() == 4);
        CHECK(e.request_hash().size() == 64);
    }
    CHECK(down->request_count() == 4);

    auto bad = std::make_shared<mock::ScriptedTransport>(
        [](const std::string&, const nlohmann::json&) { return reply(400, "bad"); });
    TeacherClient c2(quick_config(), bad);
    try {
        c2.chat_complete(user("x"), DecodeParams::greedy());
        FAIL("expected TeacherError");
    } catch (const TeacherError& e) {
        CHECK(e.kind() == FailureKind::http_status);
        CHECK(e.status() == 400);
    }
    CHECK(bad->request_count() == 1);
    CHECK(c2.usage().failures == 1);
}

TEST_CASE("batch keeps submission order and bounds concurrency") {
    auto transport = std::make_shared<mock::ScriptedTransport>([](const std::string& path, const nlohmann::json& req) {
        const auto msg = mock::last_user_message(req);
        std::this_thread::sleep_for(std::chrono::milliseconds(5 + (msg.size() * 7) % 11));
        if (msg == "req 5") return reply(400, "rejected");
        return mock::echo_responder(path, req);
    });
    auto cfg = quick_config();
    cfg.max_concurrency = 3;
    TeacherClient client(cfg, transport);
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 24; ++i) reqs.push_back({user("req " + std::to_string(i)), DecodeParams::greedy()});
    const auto results = client.chat_complete_batch(reqs);
    REQUIRE(results.size() == 24);
    for (int i = 0; i < 24; ++i) {
        if (i == 5) {
            CHECK_FALSE(results[i].ok());
        } else {
            CHECK(results[i].text == "req " + std::to_string(i));
        }
    }
    CHECK(transport->max_in_flight() <= 3);
    CHECK(transport->max_in_flight() >= 2);
}

TEST_CASE("empty content and empty embedding batch are rejected") {
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::echo_responder);
    TeacherClient client(quick_config(), transport);
    CHECK_THROWS_AS(client.chat_complete(user(""), DecodeParams::greedy()), InputError);
    try {
        client.embed({});
        FAIL("expected TeacherError");
    } catch (const TeacherError& e) {
        CHECK(e.kind() == FailureKind::empty_batch);
        CHECK(std::string(e.what()) == "empty batch");
    }
    CHECK(transport->request_count() == 0);
}

TEST_CASE("embeddings are ordered by index and cached") {
    auto transport = std::make_shared<mock::ScriptedTransport>([](const std::string&, const nlohmann::json&) {
        mock::MockReply r;
        r.raw_body = R"({"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]})";
        return r;
    });
    TeacherClient client(quick_config(), transport);
    const auto v = client.embed({"a", "b"});
    CHECK(v == std::vector<std::vector<double>>{{1, 0}, {0, 1}});
    client.embed({"a", "b"});
    CHECK(transport->request_count() == 1);
}

TEST_CASE("response parsing") {
    const auto [text, p, c] =
        parse_chat_response(R"({"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}})");
    CHECK(text == "hi");
    CHECK(p == 3);
    CHECK(c == 1);
    CHECK_THROWS_AS(parse_chat_response("not json"), TeacherError);
    CHECK_THROWS_AS(parse_chat_response(R"({"choices":[]})"), TeacherError);
}

TEST_CASE("api key comes from the configured environment variable") {
    ::setenv("VALIGN_TEST_KEY", "sekrit", 1);
    mock::MockTeacherServer server(mock::echo_responder);
    server.start();
    auto cfg = quick_config();
    cfg.base_url = server.base_url();
    TeacherClient client(cfg);
    CHECK(client.chat_complete(user("over the wire"), DecodeParams::greedy()) == "over the wire");
    const auto reqs = server.requests();
    REQUIRE(reqs.size() == 1);
    CHECK(reqs[0].path == "/v1/chat/completions");
    CHECK(reqs[0].body["model"] == "m");
    const auto vecs = client.embed({"one", "two", "three"});
    CHECK(vecs.size() == 3);
    server.stop();
    ::unsetenv("VALIGN_TEST_KEY");
}

TEST_CASE("unreachable server exhausts retries") {
    auto cfg = quick_config();
    cfg.base_url = "http://127.0.0.1:1";
    cfg.timeout_s = 2;
    cfg.retry.max_attempts = 2;
    TeacherClient client(cfg);
    client.set_sleeper([](std::chrono::milliseconds) {});
    try {
        client.chat_complete(user("x"), DecodeParams::greedy());
        FAIL("expected TeacherError");
    } catch (const TeacherError& e) {
        CHECK(e.kind() == FailureKind::retries_exhausted);
        CHECK(e.status() == 0);
    }
}
