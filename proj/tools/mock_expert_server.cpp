// Scripted stand-in for remote expert services.
//
// Usage: mock_expert_server SCRIPT.json [--port N]
// The script names the simulated experts it hosts and the corpus they score:
//   {"samples_path": "corpus.jsonl", "port": 8080,
//    "experts": {"expert_1": {"default_noise_std": 0.3, "seed": 1}, ...},
//    "drop_first_attempts": 0, "forced_score": null}
// Routes: POST /<expert_id>/critique and POST /<expert_id>/rewrite.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "refinery/config.hpp"
#include "refinery/corpus.hpp"
#include "refinery/errors.hpp"
#include "refinery/mock_server.hpp"

namespace fs = std::filesystem;
using namespace refinery;

int main(int argc, char** argv) {
    CLI::App app{"Scripted mock expert server"};
    std::string script_path;
    std::string host = "127.0.0.1";
    std::optional<int> port_flag;
    app.add_option("script", script_path, "Script JSON")->required();
    app.add_option("--host", host, "Bind address");
    app.add_option("--port", port_flag, "Port (overrides the script)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        std::ifstream in(script_path);
        if (!in) throw IoError("cannot open '" + script_path + "'");
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(std::string("script is not valid JSON: ") + e.what());
        }

        experts::MockScript script;
        const std::uint64_t seed = doc.value("seed", std::uint64_t{0});
        const auto roster = doc.value("experts", nlohmann::json::object());
        for (const auto& [id, params] : roster.items()) {
            script.experts[id] = simulated_params_from_json(params, seed);
        }
        if (doc.contains("samples_path")) {
            fs::path samples = doc["samples_path"].get<std::string>();
            if (samples.is_relative()) samples = fs::path(script_path).parent_path() / samples;
            for (auto& s : load_records<Sample>(samples)) script.samples[s.id] = std::move(s);
        }
        script.drop_first_attempts = doc.value("drop_first_attempts", 0);
        if (doc.contains("forced_score") && !doc["forced_score"].is_null()) {
            script.forced_score = doc["forced_score"].get<double>();
        }
        const int port = port_flag.value_or(doc.value("port", 8080));

        experts::MockExpertServer server(std::move(script));
        std::cout << "serving on " << host << ":" << port << std::endl;
        server.listen_blocking(host, port);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
