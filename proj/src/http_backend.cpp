#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "refinery/errors.hpp"
#include "refinery/experts.hpp"

namespace refinery::experts {

using json = nlohmann::json;

namespace {

json parse_body(const std::string& body, const std::string& expert_id) {
    try {
        return json::parse(body);
    } catch (const json::parse_error&) {
        throw ValidationError("expert '" + expert_id + "' returned malformed JSON");
    }
}

}  // namespace

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint '" + endpoint + "' lacks a scheme");
    const auto path = endpoint.find('/', scheme + 3);
    if (path == std::string::npos) return {endpoint, ""};
    std::string prefix = endpoint.substr(path);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {endpoint.substr(0, path), prefix};
}

HttpExpert::HttpExpert(std::string expert_id, HttpExpertOptions options)
    : id_(std::move(expert_id)), options_(std::move(options)) {
    std::tie(base_url_, path_prefix_) = split_endpoint(options_.endpoint);
    if (options_.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
}

std::string HttpExpert::post_with_retry(const std::string& path, const std::string& body) const {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + options_.retry.deadline;
    auto backoff = std::chrono::duration<double, std::milli>(options_.retry.initial_backoff);

    httplib::Headers headers;
    for (const auto& [k, v] : options_.headers) headers.emplace(k, v);

    std::string last_error = "no attempt made";
    for (int attempt = 1; attempt <= options_.retry.max_attempts; ++attempt) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
        if (remaining.count() <= 0) {
            last_error = "deadline exceeded";
            break;
        }
        httplib::Client client(base_url_);
        const auto timeout = std::min(remaining, options_.request_timeout);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        auto result = client.Post(path_prefix_ + path, headers, body, "application/json");
        if (result && result->status >= 200 && result->status < 300) {
            return result->body;
        }
        last_error = result ? "HTTP " + std::to_string(result->status) : "transport error: " + httplib::to_string(result.error());

        if (attempt == options_.retry.max_attempts) break;
        const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(backoff);
        if (clock::now() + wait >= deadline) {
            last_error += " (deadline reached before retry)";
            break;
        }
        std::this_thread::sleep_for(wait);
        backoff *= options_.retry.backoff_multiplier;
    }
    throw BackendError("expert '" + id_ + "' " + path + " failed: " + last_error);
}

CritiqueResponse HttpExpert::critique(const CritiqueRequest& request) const {
    json body{{"sample_id", request.sample.id},
              {"question", request.sample.question},
              {"answer", request.answer},
              {"prior_text", request.prior_text},
              {"rubric_id", to_string(Rubric::Critique)}};
    if (options_.send_prompt) {
        const PromptBundle bundle{request.sample.question, request.answer, request.prior_text, Rubric::Critique, {}, {}};
        const auto& tmpl = options_.critique_template.empty() ? default_template(Rubric::Critique)
                                                              : options_.critique_template;
        body["prompt"] = render_prompt(bundle, tmpl);
    }
    const auto response = parse_body(post_with_retry("/critique", body.dump()), id_);
    if (!response.is_object() || !response.contains("score") || !response["score"].is_number()) {
        throw ValidationError("expert '" + id_ + "' critique response lacks a numeric 'score'");
    }
    const double score = response["score"].get<double>();
    if (!(score >= kScoreMin && score <= kScoreMax)) {
        throw ValidationError("expert '" + id_ + "' returned score out of [0,5]: " + std::to_string(score));
    }
    std::string rationale;
    if (auto it = response.find("rationale"); it != response.end() && it->is_string()) rationale = it->get<std::string>();
    return {score, rationale};
}

std::string HttpExpert::rewrite(const RewriteRequest& request) const {
    json body{{"sample_id", request.sample.id},
              {"question", request.sample.question},
              {"answer", request.sample.answer},
              {"prior_text", request.prior_text},
              {"rubric_id", to_string(Rubric::Rewrite)},
              {"rationale", request.rationale},
              {"fused_score", request.fused_score}};
    if (options_.send_prompt) {
        const PromptBundle bundle{request.sample.question, request.sample.answer, request.prior_text,
                                  Rubric::Rewrite,         request.rationale,     request.fused_score};
        const auto& tmpl = options_.rewrite_template.empty() ? default_template(Rubric::Rewrite)
                                                             : options_.rewrite_template;
        body["prompt"] = render_prompt(bundle, tmpl);
    }
    const auto response = parse_body(post_with_retry("/rewrite", body.dump()), id_);
    if (!response.is_object() || !response.contains("answer") || !response["answer"].is_string()) {
        throw ValidationError("expert '" + id_ + "' rewrite response lacks a string 'answer'");
    }
    return response["answer"].get<std::string>();
}

}  // namespace refinery::experts
