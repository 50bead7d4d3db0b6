#include "valign/mock.hpp"

#include <algorithm>
#include <cmath>

#include "valign/text.hpp"

namespace valign::mock {

namespace {

std::string between(const std::string& s, std::string_view open, std::string_view close) {
    const auto b = s.find(open);
    if (b == std::string::npos) return {};
    const auto start = b + open.size();
    const auto e = s.find(close, start);
    return s.substr(start, e == std::string::npos ? std::string::npos : e - start);
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

std::string first_sentence(const std::string& passage) {
    std::string flat;
    for (auto w : text::split_ws(passage)) {
        if (!flat.empty()) flat += ' ';
        flat += w;
    }
    auto end = flat.find(". ");
    if (end != std::string::npos) flat = flat.substr(0, end + 1);
    if (flat.size() > 240) flat = flat.substr(0, text::utf8_floor(flat, 240));
    return flat;
}

std::string topic_of(const std::string& passage) {
    auto tokens = text::alnum_tokens(passage);
    if (tokens.size() > 6) tokens.resize(6);
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out.empty() ? "this passage" : out;
}

std::string keyword_stem(std::string kw) {
    kw = text::to_lower_ascii(kw);
    if (kw.size() > 4 && kw.ends_with("ies")) return kw.substr(0, kw.size() - 3);
    if (kw.size() > 3 && kw.ends_with("s")) return kw.substr(0, kw.size() - 1);
    return kw;
}

int parse_int(const std::string& s, int fallback) {
    try {
        return std::stoi(s);
    } catch (...) {
        return fallback;
    }
}

std::vector<double> hashed_bow(const std::string& s, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    for (const auto& tok : text::alnum_tokens(s)) {
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : tok) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        v[h % dim] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) {
        v[0] = 1.0;
        return v;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

} // namespace

std::string chat_completion_body(const std::string& content, const std::string& model) {
    const auto words = text::split_ws(content).size();
    return nlohmann::json{{"id", "chatcmpl-mock"},
                          {"object", "chat.completion"},
                          {"model", model},
                          {"choices",
                           {{{"index", 0},
                             {"message", {{"role", "assistant"}, {"content", content}}},
                             {"finish_reason", "stop"}}}},
                          {"usage", {{"prompt_tokens", 0}, {"completion_tokens", words}, {"total_tokens", words}}}}
        .dump();
}

std::string embedding_body(const std::vector<std::vector<double>>& vectors, const std::string& model) {
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", vectors[i]}});
    }
    return nlohmann::json{{"object", "list"}, {"model", model}, {"data", data}}.dump();
}

std::string render_reply(const MockReply& reply, const std::string& path, const nlohmann::json& request) {
    if (reply.raw_body) return *reply.raw_body;
    const std::string model = request.value("model", std::string("mock"));
    if (path.ends_with("/embeddings")) return embedding_body(reply.embeddings.value_or(std::vector<std::vector<double>>{}), model);
    return chat_completion_body(reply.content, model);
}

std::string last_user_message(const nlohmann::json& request) {
    if (!request.contains("messages")) return {};
    const auto& msgs = request["messages"];
    for (auto it = msgs.rbegin(); it != msgs.rend(); ++it) {
        if (it->value("role", "") == "user") return it->value("content", "");
    }
    return {};
}

MockReply echo_responder(const std::string& path, const nlohmann::json& request) {
    MockReply reply;
    if (path.ends_with("/embeddings")) {
        const auto n = request.value("input", nlohmann::json::array()).size();
        std::vector<std::vector<double>> vecs(n, std::vector<double>(std::max<std::size_t>(n, 1), 0.0));
        for (std::size_t i = 0; i < n; ++i) vecs[i][i] = 1.0;
        reply.embeddings = std::move(vecs);
        return reply;
    }
    reply.content = last_user_message(request);
    return reply;
}

MockReply fixture_responder(const std::string& path, const nlohmann::json& request) {
    MockReply reply;
    if (path.ends_with("/embeddings")) {
        std::vector<std::vector<double>> vecs;
        for (const auto& in : request.value("input", nlohmann::json::array())) {
            vecs.push_back(hashed_bow(in.get<std::string>(), 64));
        }
        reply.embeddings = std::move(vecs);
        return reply;
    }
    const std::string prompt = last_user_message(request);
    const std::int64_t seed = request.value("seed", std::int64_t{0});

    if (starts_with(prompt, "You are asked to come up with a set of")) {
        const int nex = parse_int(between(prompt, "set of ", " diverse"), 1);
        const auto passage = between(prompt, "\nPassage: ", "\n\nNow, generate ");
        const auto keyword = between(prompt, "that test the ", " in the passage");
        const auto topic = topic_of(passage);
        for (int i = 0; i < nex; ++i) {
            nlohmann::json line{{"question", "In a situation involving " + topic + ", how should the " + keyword +
                                                 " in the passage guide a decision (case " + std::to_string(i + 1) +
                                                 ", draw " + std::to_string(seed) + ")?"}};
            reply.content += line.dump() + "\n";
        }
        return reply;
    }
    if (starts_with(prompt, "Context information is below.")) {
        const auto passage = between(prompt, "---------------------\n", "\n---------------------");
        reply.content = "According to the provided context: " + first_sentence(passage);
        return reply;
    }
    if (starts_with(prompt, "You are asked to develop")) {
        const int nex = parse_int(between(prompt, "develop ", " questions"), 1);
        const auto passage = between(prompt, "\nPassage: ", "\n\nNow, generate ");
        const auto keyword = between(prompt, "that test the ", " in the passage");
        const auto topic = topic_of(passage);
        const auto sentence = first_sentence(passage);
        for (int i = 0; i < nex; ++i) {
            nlohmann::json line{
                {"question", "Faced with a dilemma about " + topic + ", what do the " + keyword +
                                 " in the passage expect (scenario " + std::to_string(i + 1) + ", draw " +
                                 std::to_string(seed) + ")?"},
                {"faithful", "Follow the passage: " + sentence},
                {"unfaithful", "Ignore the passage and do the opposite of this: " + sentence}};
            reply.content += line.dump() + "\n";
        }
        return reply;
    }
    if (starts_with(prompt, "You are given a passage from a document.")) {
        const auto passage = text::to_lower_ascii(between(prompt, "\nPassage: ", "\n\nAnswer with exactly"));
        const auto keyword = between(prompt, "describes ", "-related");
        reply.content = passage.find(keyword_stem(keyword)) != std::string::npos ? "YES" : "NO";
        return reply;
    }
    if (starts_with(prompt, "###Task Description:")) {
        const auto a = between(prompt, "###Response A:\n", "\n\n###Response B:");
        const auto b = between(prompt, "###Response B:\n", "\n\n###Score Rubric:");
        reply.content = std::string("Feedback: The preferred response covers the values more completely. [RESULT] ") +
                        (b.size() > a.size() ? "[[B]]" : "[[A]]");
        return reply;
    }
    reply.content = prompt;
    return reply;
}

teacher::HttpResponse ScriptedTransport::post(const std::string& path, const std::string& body,
                                              const teacher::Headers&) {
    const auto now = ++in_flight_;
    auto prev = max_in_flight_.load();
    while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
    }
    struct Leave {
        std::atomic<std::size_t>& c;
        ~Leave() { --c; }
    } leave{in_flight_};

    const auto request = nlohmann::json::parse(body, nullptr, false);
    {
        std::lock_guard lock(mu_);
        log_.push_back({path, request});
    }
    const MockReply reply = responder_(path, request);
    teacher::HttpResponse resp;
    resp.status = reply.status;
    if (reply.status == 0) {
        resp.transport_error = "scripted connection failure";
        return resp;
    }
    resp.body = reply.status == 200 ? render_reply(reply, path, request) : reply.raw_body.value_or("error");
    return resp;
}

std::vector<RecordedRequest> ScriptedTransport::requests() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::size_t ScriptedTransport::request_count() const {
    std::lock_guard lock(mu_);
    return log_.size();
}

} // namespace valign::mock
