#pragma once

// Critic / rewriter backends.
//
// An ExpertBackend scores an (image, question, answer, prior) tuple and
// rewrites answers given feedback. Two implementations ship: a simulated
// expert drawing scores from a latent-truth-plus-noise model, and an HTTP
// client for external services. request_critiques / request_rewrites fan out
// over a roster with bounded parallelism and return results ordered by ids.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refinery/corpus.hpp"

namespace refinery::experts {

/// "Detected objects: a, b\nDetected text: x | y", "(none)" for empty lists.
std::string serialize_vision_prior(const VisionPrior& prior);

enum class Rubric { Critique, Rewrite };

std::string to_string(Rubric rubric);

struct PromptBundle {
    std::string question;
    std::string answer;
    std::string serialized_prior;
    Rubric rubric = Rubric::Critique;
    std::optional<std::string> rationale;  // rewrite only
    std::optional<double> fused_score;     // rewrite only
};

/// Default rubric texts; deployments override them through the config.
const std::string& default_template(Rubric rubric);

/// Substitutes {question}, {answer}, {prior}, {rationale} and {fused_score}.
std::string render_prompt(const PromptBundle& bundle, const std::string& tmpl);

struct CritiqueRequest {
    Sample sample;
    std::string answer;  // the answer under review; a0 or a rewrite candidate
    std::string prior_text;
};

struct CritiqueResponse {
    double score = 0.0;
    std::string rationale;
};

struct RewriteRequest {
    Sample sample;
    std::string prior_text;
    std::string rationale;
    double fused_score = 0.0;
};

enum class BackendKind { Simulated, Http };

class ExpertBackend {
public:
    virtual ~ExpertBackend() = default;

    virtual const std::string& expert_id() const = 0;
    virtual BackendKind kind() const = 0;

    /// Returns a score in [0, 5]; throws BackendError or ValidationError.
    virtual CritiqueResponse critique(const CritiqueRequest& request) const = 0;
    virtual std::string rewrite(const RewriteRequest& request) const = 0;
};

using Roster = std::vector<std::shared_ptr<const ExpertBackend>>;

struct SimulatedExpertParams {
    std::map<std::string, double> noise_std;  // per domain
    double default_noise_std = 0.5;
    std::map<std::string, double> bias;  // per domain
    double default_bias = 0.0;
    double rewrite_bias = 0.0;  // shifts the rewrite quality draw
    std::uint64_t seed = 0;

    double noise_for(const std::string& domain) const;
    double bias_for(const std::string& domain) const;
    /// Throws ConfigError on a negative noise std.
    void validate() const;
};

/// Simulated answers carry their latent quality as a trailing annotation
/// so that any simulated critic, in-process or behind the mock server, can
/// score them without shared state.
std::string annotate_quality(const std::string& answer, double quality);
std::optional<double> annotated_quality(const std::string& answer);
std::string strip_quality(const std::string& answer);

/// Scores with s = clip(y + bias_d + eta, 0, 5), eta ~ N(0, sigma_d^2).
///
/// y is the answer's annotated quality, else the sample's latent_truth. Each
/// draw uses its own Rng stream seeded from (seed, expert_id, sample_id,
/// purpose, answer), so results do not depend on call order.
class SimulatedExpert final : public ExpertBackend {
public:
    SimulatedExpert(std::string expert_id, SimulatedExpertParams params);

    const std::string& expert_id() const override { return id_; }
    BackendKind kind() const override { return BackendKind::Simulated; }
    const SimulatedExpertParams& params() const { return params_; }

    CritiqueResponse critique(const CritiqueRequest& request) const override;
    /// Quality of the rewrite is max(y, clip(S + rewrite_bias + eta, 0, 5)).
    std::string rewrite(const RewriteRequest& request) const override;

    /// The raw noise draw for (sample, answer); exposed for reproducibility tests.
    double noise_draw(const std::string& sample_id, const std::string& purpose, const std::string& answer) const;

private:
    std::string id_;
    SimulatedExpertParams params_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{250};
    double backoff_multiplier = 2.0;
    std::chrono::milliseconds deadline{60000};
};

struct HttpExpertOptions {
    std::string endpoint;  // e.g. http://127.0.0.1:8080/expert_1
    std::map<std::string, std::string> headers;
    RetryPolicy retry;
    std::chrono::milliseconds request_timeout{30000};
    /// Adds the rendered prompt to the request body under "prompt".
    bool send_prompt = false;
    std::string critique_template;
    std::string rewrite_template;
};

/// Posts to {endpoint}/critique and {endpoint}/rewrite. Non-2xx responses
/// and transport failures are retried with exponential backoff; a 2xx body
/// that violates the response schema is a ValidationError and not retried.
class HttpExpert final : public ExpertBackend {
public:
    HttpExpert(std::string expert_id, HttpExpertOptions options);

    const std::string& expert_id() const override { return id_; }
    BackendKind kind() const override { return BackendKind::Http; }

    CritiqueResponse critique(const CritiqueRequest& request) const override;
    std::string rewrite(const RewriteRequest& request) const override;

private:
    std::string post_with_retry(const std::string& path, const std::string& body) const;

    std::string id_;
    HttpExpertOptions options_;
    std::string base_url_;
    std::string path_prefix_;
};

/// Splits "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint);

struct RequestFailure {
    std::string sample_id;
    std::string expert_id;
    std::string message;
    bool validation = false;  // schema/range violation rather than transport
};

struct CritiqueBatch {
    std::vector<CritiqueRecord> records;  // sorted by (sample_id, expert_id)
    std::vector<RequestFailure> failures;
};

/// Runs fn(0..count-1) on at most `limit` worker threads. Exceptions thrown
/// by fn escape from the first failing index after all workers join.
void parallel_for(std::size_t count, std::size_t limit, const std::function<void(std::size_t)>& fn);

/// One critique per (sample, expert). `priors[i]` belongs to `samples[i]`.
/// Failures are collected; unless allow_partial, any failure throws
/// (ValidationError if every failure is a validation failure, else
/// BackendError).
CritiqueBatch request_critiques(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                                const Roster& roster, std::size_t concurrency_limit, bool allow_partial);

struct RewriteBatch {
    std::vector<RewriteRecord> records;  // sorted by (sample_id, expert_id)
    std::vector<RequestFailure> failures;
};

/// One rewrite per (sample, expert), conditioned on that expert's critique
/// rationale and the sample's fused score.
RewriteBatch request_rewrites(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                              std::span<const CritiqueRecord> critiques, std::span<const FusedLabel> fused,
                              const Roster& roster, std::size_t concurrency_limit, bool allow_partial);

}  // namespace refinery::experts
