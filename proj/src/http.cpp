// cpp-httplib is confined to this translation unit.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "valign/mock.hpp"
#include "valign/teacher.hpp"

namespace valign {

namespace teacher {

HttpTransport::HttpTransport(std::string base_url, int timeout_s) : timeout_s_(timeout_s) {
    // split "scheme://host[:port][/prefix]"
    const auto scheme_end = base_url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = base_url.find('/', host_start);
    scheme_host_port_ = base_url.substr(0, path_start);
    if (path_start != std::string::npos) path_prefix_ = base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    // Tolerate base URLs that already end in /v1.
    if (path_prefix_.ends_with("/v1")) path_prefix_.resize(path_prefix_.size() - 3);
}

HttpResponse HttpTransport::post(const std::string& path, const std::string& body, const Headers& headers) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(timeout_s_, 0);
    client.set_read_timeout(timeout_s_, 0);
    client.set_write_timeout(timeout_s_, 0);
    httplib::Headers hdrs;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
        if (k == "Content-Type") {
            content_type = v;
            continue;
        }
        hdrs.emplace(k, v);
    }
    HttpResponse out;
    auto res = client.Post(path_prefix_ + path, hdrs, body, content_type);
    if (!res) {
        out.status = 0;
        out.transport_error = httplib::to_string(res.error());
        return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
}

} // namespace teacher

namespace mock {

struct MockTeacherServer::Impl {
    httplib::Server server;
};

MockTeacherServer::MockTeacherServer(Responder responder)
    : impl_(std::make_unique<Impl>()), responder_(std::move(responder)) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        const auto request = nlohmann::json::parse(req.body, nullptr, false);
        {
            std::lock_guard lock(mu_);
            log_.push_back({req.path, request});
        }
        if (request.is_discarded()) {
            res.status = 400;
            res.set_content(R"({"error":{"message":"invalid JSON"}})", "application/json");
            return;
        }
        const MockReply reply = responder_(req.path, request);
        res.status = reply.status;
        if (reply.status == 200) {
            res.set_content(render_reply(reply, req.path, request), "application/json");
        } else {
            res.set_content(reply.raw_body.value_or(R"({"error":{"message":"scripted failure"}})"),
                            "application/json");
        }
    };
    impl_->server.Post("/v1/chat/completions", handler);
    impl_->server.Post("/v1/embeddings", handler);
}

MockTeacherServer::~MockTeacherServer() { stop(); }

void MockTeacherServer::start(const std::string& host, int port) {
    host_ = host;
    if (port == 0) {
        port_ = impl_->server.bind_to_any_port(host);
    } else {
        if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind mock teacher to port " + std::to_string(port));
        port_ = port;
    }
    if (port_ < 0) throw Error("cannot bind mock teacher server");
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void MockTeacherServer::listen_blocking(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    if (!impl_->server.listen(host, port)) throw Error("mock teacher server failed to listen on port " + std::to_string(port));
}

void MockTeacherServer::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

std::string MockTeacherServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

std::vector<RecordedRequest> MockTeacherServer::requests() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::size_t MockTeacherServer::request_count() const {
    std::lock_guard lock(mu_);
    return log_.size();
}

} // namespace mock

} // namespace valign
