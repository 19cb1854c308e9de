#pragma once

// Scripted HTTP expert service for integration tests.
//
// Serves POST /<expert_id>/critique and /<expert_id>/rewrite with the same
// simulated-expert model as the in-process backend, so a run against the
// mock and a run against simulated experts with identical parameters agree.
// Failure injection: the first `drop_first_attempts` calls for each distinct
// request body are answered with 503, and `forced_score` overrides every
// critique score (including out-of-range values).

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "refinery/corpus.hpp"
#include "refinery/experts.hpp"

namespace httplib {
class Server;
}

namespace refinery::experts {

struct MockScript {
    std::map<std::string, SimulatedExpertParams> experts;
    std::map<std::string, Sample> samples;  // by id; supplies latent truth and domain
    int drop_first_attempts = 0;
    std::optional<double> forced_score;
};

class MockExpertServer {
public:
    explicit MockExpertServer(MockScript script);
    ~MockExpertServer();

    MockExpertServer(const MockExpertServer&) = delete;
    MockExpertServer& operator=(const MockExpertServer&) = delete;

    /// Binds to host on an ephemeral port (or `port` if non-zero) and serves
    /// on a background thread. Returns the bound port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();

    /// Serves on the calling thread until stop() is called elsewhere.
    void listen_blocking(const std::string& host, int port);

    int port() const { return port_; }
    std::string endpoint_for(const std::string& expert_id) const;

    std::size_t requests_served() const { return served_; }
    std::size_t requests_dropped() const { return dropped_; }

private:
    void install_routes();

    MockScript script_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::string host_ = "127.0.0.1";
    int port_ = 0;
    std::mutex mutex_;
    std::map<std::string, int> attempts_;
    std::atomic<std::size_t> served_{0};
    std::atomic<std::size_t> dropped_{0};
};

}  // namespace refinery::experts
