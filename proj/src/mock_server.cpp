#include "refinery/mock_server.hpp"

#include "httplib.h"
#include "json.hpp"
#include "refinery/errors.hpp"

namespace refinery::experts {

using json = nlohmann::json;

MockExpertServer::MockExpertServer(MockScript script)
    : script_(std::move(script)), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

MockExpertServer::~MockExpertServer() { stop(); }

void MockExpertServer::install_routes() {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        const std::string expert_id = req.matches[1];
        const std::string action = req.matches[2];
        {
            std::lock_guard lock(mutex_);
            int& seen = attempts_[expert_id + "\x1f" + action + "\x1f" + req.body];
            ++seen;
            if (seen <= script_.drop_first_attempts) {
                ++dropped_;
                res.status = 503;
                res.set_content(R"({"error":"scripted drop"})", "application/json");
                return;
            }
        }
        auto expert_it = script_.experts.find(expert_id);
        if (expert_it == script_.experts.end()) {
            res.status = 404;
            res.set_content(R"({"error":"unknown expert"})", "application/json");
            return;
        }
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error&) {
            res.status = 400;
            return;
        }
        const auto sample_id = body.value("sample_id", std::string{});
        auto sample_it = script_.samples.find(sample_id);
        if (sample_it == script_.samples.end()) {
            res.status = 400;
            res.set_content(R"({"error":"unknown sample"})", "application/json");
            return;
        }
        const SimulatedExpert expert(expert_id, expert_it->second);
        try {
            json out;
            if (action == "critique") {
                auto response = expert.critique({sample_it->second, body.value("answer", std::string{}),
                                                 body.value("prior_text", std::string{})});
                out = {{"score", script_.forced_score.value_or(response.score)}, {"rationale", response.rationale}};
            } else {
                out = {{"answer", expert.rewrite({sample_it->second, body.value("prior_text", std::string{}),
                                                  body.value("rationale", std::string{}),
                                                  body.value("fused_score", 0.0)})}};
            }
            ++served_;
            res.set_content(out.dump(), "application/json");
        } catch (const Error& e) {
            res.status = 422;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    };
    server_->Post(R"(/([A-Za-z0-9_.-]+)/(critique|rewrite))", handler);
}

int MockExpertServer::start(const std::string& host, int port) {
    host_ = host;
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
    } else {
        port_ = server_->bind_to_port(host, port) ? port : -1;
    }
    if (port_ <= 0) throw IoError("mock expert server could not bind to " + host);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void MockExpertServer::listen_blocking(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    if (!server_->listen(host, port)) throw IoError("mock expert server could not listen on port " + std::to_string(port));
}

void MockExpertServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string MockExpertServer::endpoint_for(const std::string& expert_id) const {
    return "http://" + host_ + ":" + std::to_string(port_) + "/" + expert_id;
}

}  // namespace refinery::experts
