#pragma once

// Group-relative policy optimization over a toy autoregressive critic.
//
// The policy emits one token per position from an independent softmax per
// position, so the full output distribution is enumerable and the KL term can
// be evaluated exactly. The vocabulary is the three critic section markers,
// the six score digits and an end token.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/random.hpp"

namespace refinery::grpo {

enum Token : int {
    QuestionAnalysis = 0,
    EvaluationReasons,
    Scoring,
    Digit0,
    Digit1,
    Digit2,
    Digit3,
    Digit4,
    Digit5,
    End,
};

inline constexpr std::size_t kVocabSize = 10;

/// Renders a token sequence over the standard vocabulary as critic text.
/// An open <Scoring> section is closed before the next marker or the end.
std::string render_tokens(std::span<const int> tokens);

/// Inverse of render_tokens for well-formed text: markers and digits in order
/// of appearance, other characters ignored, truncated to max_len.
std::vector<int> tokenize(std::string_view text, std::size_t max_len);

/// Position-conditioned categorical policy. theta is positions x vocab,
/// row-major; row p holds the logits of the token emitted at position p.
class ToyPolicy {
public:
    ToyPolicy() = default;
    ToyPolicy(std::size_t positions, std::size_t vocab);
    ToyPolicy(std::size_t positions, std::size_t vocab, std::vector<double> theta);

    std::size_t positions() const { return positions_; }
    std::size_t vocab() const { return vocab_; }
    std::size_t parameter_count() const { return theta_.size(); }

    std::span<const double> theta() const { return theta_; }
    std::span<double> theta() { return theta_; }
    double logit(std::size_t position, std::size_t token) const { return theta_[position * vocab_ + token]; }

    /// Softmax of row `position`.
    std::vector<double> probabilities(std::size_t position) const;
    double log_prob(std::size_t position, int token) const;
    double sequence_log_prob(std::span<const int> tokens) const;

    /// Samples until End is drawn or every position is used.
    std::vector<int> sample(Rng& rng) const;

    bool operator==(const ToyPolicy&) const = default;

private:
    std::size_t positions_ = 0;
    std::size_t vocab_ = 0;
    std::vector<double> theta_;
};

struct Rollout {
    std::vector<int> tokens;
    std::vector<double> old_log_probs;  // per token, under the sampling policy
    double reward = 0.0;
};

struct RolloutGroup {
    std::string question_id;
    std::vector<Rollout> rollouts;
};

struct GrpoConfig {
    double clip_eps = 0.2;
    double kl_beta = 0.01;
    std::size_t group_size = 128;
    double adv_eps = 1e-8;

    /// Throws ConfigError unless clip_eps in (0, 1), kl_beta >= 0, group_size >= 1.
    void validate() const;
};

/// (R_i - mean R) / (std R + adv_eps) with the population std; a single
/// rollout, or a group whose rewards are all equal, gets advantage 0.
std::vector<double> group_advantage(std::span<const double> rewards, double adv_eps);

/// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
double clipped_term(double ratio, double advantage, double clip_eps);

/// Exact categorical KL(p || q). Throws ComputeError on a size mismatch or
/// q = 0 where p > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Builds a group whose old log-probabilities come from `old_policy`.
RolloutGroup make_group(std::string question_id, std::vector<std::vector<int>> sequences,
                        std::span<const double> rewards, const ToyPolicy& old_policy);

/// Token-averaged KL(policy || ref) over the positions visited by the group,
/// weighted exactly like the surrogate term.
double group_kl(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& ref);

/// (1/G) sum_i (1/|o_i|) sum_t [clipped_term(r_it, A_i) - beta * KL_t], where
/// r_it is the probability ratio of token t against the group's old policy.
double grpo_objective(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& ref,
                      const GrpoConfig& config);

/// Analytic gradient of grpo_objective with respect to policy.theta().
std::vector<double> grpo_gradient(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& ref,
                                  const GrpoConfig& config);

/// Mean objective over a batch of groups.
double batch_objective(std::span<const RolloutGroup> groups, const ToyPolicy& policy, const ToyPolicy& ref,
                       const GrpoConfig& config);

/// One gradient-ascent step on the batch mean objective. Throws ComputeError
/// on a non-finite gradient or a non-positive learning rate.
ToyPolicy grpo_step(std::span<const RolloutGroup> groups, const ToyPolicy& policy, const ToyPolicy& ref,
                    const GrpoConfig& config, double learning_rate);

}  // namespace refinery::grpo
