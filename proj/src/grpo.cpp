#include "refinery/grpo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "refinery/errors.hpp"
#include "refinery/rewards.hpp"

namespace refinery::grpo {

namespace {

bool is_digit_token(int t) { return t >= Digit0 && t <= Digit5; }

void check_group(const RolloutGroup& group, const ToyPolicy& policy) {
    if (group.rollouts.empty()) throw ComputeError("group '" + group.question_id + "' has no rollouts");
    for (const auto& r : group.rollouts) {
        if (r.tokens.empty()) throw ComputeError("empty rollout in group '" + group.question_id + "'");
        if (r.tokens.size() > policy.positions()) {
            throw ComputeError("rollout longer than the policy's position count");
        }
        if (r.old_log_probs.size() != r.tokens.size()) {
            throw ComputeError("rollout old log-probabilities do not match its tokens");
        }
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            if (r.tokens[t] < 0 || static_cast<std::size_t>(r.tokens[t]) >= policy.vocab()) {
                throw ComputeError("token index out of vocabulary");
            }
            if (!std::isfinite(r.old_log_probs[t])) {
                throw ComputeError("token has zero probability under the old policy");
            }
        }
    }
}

std::vector<double> rewards_of(const RolloutGroup& group) {
    std::vector<double> out;
    out.reserve(group.rollouts.size());
    for (const auto& r : group.rollouts) out.push_back(r.reward);
    return out;
}

}  // namespace

std::string render_tokens(std::span<const int> tokens) {
    std::string out;
    bool scoring_open = false;
    auto append = [&](std::string_view piece) {
        if (!out.empty()) out += ' ';
        out += piece;
    };
    auto close_scoring = [&] {
        if (scoring_open) append(rewards::kScoringClose);
        scoring_open = false;
    };
    for (int t : tokens) {
        switch (t) {
            case QuestionAnalysis:
                close_scoring();
                append(rewards::kQuestionAnalysis);
                break;
            case EvaluationReasons:
                close_scoring();
                append(rewards::kEvaluationReasons);
                break;
            case Scoring:
                close_scoring();
                append(rewards::kScoring);
                scoring_open = true;
                break;
            case End:
                close_scoring();
                break;
            default:
                if (is_digit_token(t)) append(std::string(1, static_cast<char>('0' + (t - Digit0))));
                break;
        }
    }
    close_scoring();
    return out;
}

std::vector<int> tokenize(std::string_view text, std::size_t max_len) {
    static constexpr std::array<std::pair<std::string_view, int>, 4> kMarkerTokens{{
        {rewards::kScoringClose, -1},
        {rewards::kQuestionAnalysis, QuestionAnalysis},
        {rewards::kEvaluationReasons, EvaluationReasons},
        {rewards::kScoring, Scoring},
    }};
    std::vector<int> tokens;
    std::size_t i = 0;
    while (i < text.size() && tokens.size() < max_len) {
        bool matched = false;
        for (const auto& [marker, token] : kMarkerTokens) {
            if (text.substr(i, marker.size()) == marker) {
                if (token >= 0) tokens.push_back(token);
                i += marker.size();
                matched = true;
                break;
            }
        }
        if (matched) continue;
        if (text[i] >= '0' && text[i] <= '5') tokens.push_back(Digit0 + (text[i] - '0'));
        ++i;
    }
    if (tokens.empty() && max_len > 0) tokens.push_back(End);
    return tokens;
}

ToyPolicy::ToyPolicy(std::size_t positions, std::size_t vocab)
    : ToyPolicy(positions, vocab, std::vector<double>(positions * vocab, 0.0)) {}

ToyPolicy::ToyPolicy(std::size_t positions, std::size_t vocab, std::vector<double> theta)
    : positions_(positions), vocab_(vocab), theta_(std::move(theta)) {
    if (positions_ == 0 || vocab_ == 0) throw ComputeError("policy needs at least one position and token");
    if (theta_.size() != positions_ * vocab_) throw ComputeError("theta size does not match positions x vocab");
}

std::vector<double> ToyPolicy::probabilities(std::size_t position) const {
    const auto row = theta().subspan(position * vocab_, vocab_);
    const double peak = *std::max_element(row.begin(), row.end());
    std::vector<double> p(vocab_);
    double total = 0.0;
    for (std::size_t v = 0; v < vocab_; ++v) {
        p[v] = std::exp(row[v] - peak);
        total += p[v];
    }
    for (auto& x : p) x /= total;
    return p;
}

double ToyPolicy::log_prob(std::size_t position, int token) const {
    const auto row = theta().subspan(position * vocab_, vocab_);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double x : row) total += std::exp(x - peak);
    return row[static_cast<std::size_t>(token)] - peak - std::log(total);
}

double ToyPolicy::sequence_log_prob(std::span<const int> tokens) const {
    double lp = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) lp += log_prob(t, tokens[t]);
    return lp;
}

std::vector<int> ToyPolicy::sample(Rng& rng) const {
    std::vector<int> tokens;
    for (std::size_t p = 0; p < positions_; ++p) {
        const auto probs = probabilities(p);
        const double u = rng.uniform();
        double acc = 0.0;
        int chosen = static_cast<int>(vocab_) - 1;
        for (std::size_t v = 0; v < vocab_; ++v) {
            acc += probs[v];
            if (u < acc) {
                chosen = static_cast<int>(v);
                break;
            }
        }
        tokens.push_back(chosen);
        if (vocab_ == kVocabSize && chosen == End) break;
    }
    return tokens;
}

void GrpoConfig::validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("grpo.clip_eps must lie in (0, 1)");
    if (!(kl_beta >= 0.0)) throw ConfigError("grpo.kl_beta must be >= 0");
    if (group_size < 1) throw ConfigError("grpo.group_size must be >= 1");
    if (!(adv_eps >= 0.0)) throw ConfigError("grpo.adv_eps must be >= 0");
}

std::vector<double> group_advantage(std::span<const double> rewards, double adv_eps) {
    std::vector<double> adv(rewards.size(), 0.0);
    if (rewards.size() < 2) return adv;
    // Identical rewards carry no preference. Rounding in the mean would
    // otherwise leave residues that adv_eps amplifies.
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return adv;
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double std = std::sqrt(var / n);
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (std + adv_eps);
    return adv;
}

double clipped_term(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ComputeError("KL support mismatch: distributions differ in size");
    double kl = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) {
        if (p[v] <= 0.0) continue;
        if (q[v] <= 0.0) throw ComputeError("KL undefined: q has zero mass where p is positive");
        kl += p[v] * std::log(p[v] / q[v]);
    }
    return kl;
}

RolloutGroup make_group(std::string question_id, std::vector<std::vector<int>> sequences,
                        std::span<const double> rewards, const ToyPolicy& old_policy) {
    if (sequences.size() != rewards.size()) throw ComputeError("one reward per rollout required");
    RolloutGroup group{std::move(question_id), {}};
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        Rollout r{std::move(sequences[i]), {}, rewards[i]};
        if (r.tokens.size() > old_policy.positions()) {
            throw ComputeError("rollout longer than the policy's position count");
        }
        for (std::size_t t = 0; t < r.tokens.size(); ++t) r.old_log_probs.push_back(old_policy.log_prob(t, r.tokens[t]));
        group.rollouts.push_back(std::move(r));
    }
    return group;
}

double group_kl(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& ref) {
    check_group(group, policy);
    std::vector<double> kl_at(policy.positions());
    for (std::size_t p = 0; p < policy.positions(); ++p) {
        kl_at[p] = kl_divergence(policy.probabilities(p), ref.probabilities(p));
    }
    double total = 0.0;
    for (const auto& r : group.rollouts) {
        double acc = 0.0;
        for (std::size_t t = 0; t < r.tokens.size(); ++t) acc += kl_at[t];
        total += acc / static_cast<double>(r.tokens.size());
    }
    return total / static_cast<double>(group.rollouts.size());
}

double grpo_objective(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& ref,
                      const GrpoConfig& config) {
    check_group(group, policy);
    const auto adv = group_advantage(rewards_of(group), config.adv_eps);
    double total = 0.0;
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        const auto& r = group.rollouts[i];
        double acc = 0.0;
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            const double ratio = std::exp(policy.log_prob(t, r.tokens[t]) - r.old_log_probs[t]);
            acc += clipped_term(ratio, adv[i], config.clip_eps);
        }
        total += acc / static_cast<double>(r.tokens.size());
    }
    const double surrogate = total / static_cast<double>(group.rollouts.size());
    const double kl = config.kl_beta == 0.0 ? 0.0 : group_kl(group, policy, ref);
    return surrogate - config.kl_beta * kl;
}

std::vector<double> grpo_gradient(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& ref,
                                  const GrpoConfig& config) {
    check_group(group, policy);
    const std::size_t vocab = policy.vocab();
    const auto adv = group_advantage(rewards_of(group), config.adv_eps);

    std::vector<std::vector<double>> probs(policy.positions());
    std::vector<std::vector<double>> ref_probs(policy.positions());
    for (std::size_t p = 0; p < policy.positions(); ++p) {
        probs[p] = policy.probabilities(p);
        ref_probs[p] = ref.probabilities(p);
    }

    std::vector<double> grad(policy.parameter_count(), 0.0);
    // Token weight 1/(G |o_i|) is shared by the surrogate and KL terms, so the
    // KL gradient is accumulated per position as a total weight.
    std::vector<double> kl_weight(policy.positions(), 0.0);
    const double inv_g = 1.0 / static_cast<double>(group.rollouts.size());
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        const auto& r = group.rollouts[i];
        const double w = inv_g / static_cast<double>(r.tokens.size());
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            kl_weight[t] += w;
            const double ratio = std::exp(policy.log_prob(t, r.tokens[t]) - r.old_log_probs[t]);
            const double unclipped = ratio * adv[i];
            const double clipped = std::clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv[i];
            // Outside the clip range the clipped branch is constant in theta.
            if (unclipped > clipped) continue;
            const double coef = w * unclipped;
            const auto tok = static_cast<std::size_t>(r.tokens[t]);
            for (std::size_t v = 0; v < vocab; ++v) {
                grad[t * vocab + v] += coef * ((v == tok ? 1.0 : 0.0) - probs[t][v]);
            }
        }
    }
    if (config.kl_beta != 0.0) {
        for (std::size_t p = 0; p < policy.positions(); ++p) {
            if (kl_weight[p] == 0.0) continue;
            const double kl = kl_divergence(probs[p], ref_probs[p]);
            for (std::size_t v = 0; v < vocab; ++v) {
                const double pv = probs[p][v];
                const double dkl = pv > 0.0 ? pv * (std::log(pv / ref_probs[p][v]) - kl) : 0.0;
                grad[p * vocab + v] -= config.kl_beta * kl_weight[p] * dkl;
            }
        }
    }
    return grad;
}

double batch_objective(std::span<const RolloutGroup> groups, const ToyPolicy& policy, const ToyPolicy& ref,
                       const GrpoConfig& config) {
    if (groups.empty()) throw ComputeError("empty batch");
    double total = 0.0;
    for (const auto& g : groups) total += grpo_objective(g, policy, ref, config);
    return total / static_cast<double>(groups.size());
}

ToyPolicy grpo_step(std::span<const RolloutGroup> groups, const ToyPolicy& policy, const ToyPolicy& ref,
                    const GrpoConfig& config, double learning_rate) {
    if (!(learning_rate > 0.0)) throw ComputeError("learning rate must be positive");
    if (groups.empty()) throw ComputeError("empty batch");
    std::vector<double> grad(policy.parameter_count(), 0.0);
    for (const auto& g : groups) {
        const auto gg = grpo_gradient(g, policy, ref, config);
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += gg[k];
    }
    ToyPolicy next = policy;
    auto theta = next.theta();
    const double scale = learning_rate / static_cast<double>(groups.size());
    for (std::size_t k = 0; k < grad.size(); ++k) {
        if (!std::isfinite(grad[k])) throw ComputeError("non-finite GRPO gradient");
        theta[k] += scale * grad[k];
    }
    return next;
}

}  // namespace refinery::grpo
