// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "refinery/config.hpp"
#include "refinery/corpus.hpp"
#include "refinery/errors.hpp"
#include "refinery/eval.hpp"
#include "refinery/experts.hpp"
#include "refinery/fusion.hpp"
#include "refinery/grpo.hpp"
#include "refinery/inject.hpp"
#include "refinery/mock_server.hpp"
#include "refinery/pipeline.hpp"
#include "refinery/random.hpp"
#include "refinery/rewards.hpp"

using namespace refinery;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fusion::ScoreMatrix to_matrix(const oracle::Matrix& rows) {
    fusion::ScoreMatrix m(rows.size(), rows[0].size());
    for (std::size_t n = 0; n < rows.size(); ++n) {
        for (std::size_t k = 0; k < rows[n].size(); ++k) m(n, k) = rows[n][k];
    }
    return m;
}

experts::SimulatedExpertParams sim_params(double sigma, std::uint64_t seed) {
    experts::SimulatedExpertParams p;
    p.default_noise_std = sigma;
    p.seed = seed;
    return p;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 1. fuse_pipeline against the step-by-step oracle.
Outcome fusion_oracle() {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<std::string> experts{"expert_1", "expert_2", "expert_3"};
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(derive_seed(seed, "c1"));
        oracle::Matrix rows;
        std::vector<std::string> domains, ids;
        for (std::size_t i = 0; i < 200; ++i) {
            const double y = 5.0 * rng.uniform();
            std::vector<double> row;
            for (std::size_t k = 0; k < 3; ++k) {
                const double sd = 0.2 + 1.2 * rng.uniform();
                row.push_back(std::clamp(y + 0.3 * static_cast<double>(k) + rng.normal(0.0, sd), 0.0, 5.0));
            }
            rows.push_back(row);
            domains.push_back("domain_" + std::to_string(rng.index(4)));
            ids.push_back("s" + std::to_string(i));
        }
        const auto labels = fusion::fuse_pipeline(to_matrix(rows), domains, ids, experts, fusion::FusionConfig{});
        const auto ref = oracle::fuse(rows, domains);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            worst = std::max(worst, std::abs(labels[i].fused_score - ref.score[i]));
            worst = std::max(worst, std::abs(labels[i].fused_z - ref.zhat[i]));
            const auto& w = labels[i].weights_used.at(domains[i]);
            for (std::size_t k = 0; k < 3; ++k) {
                worst = std::max(worst, std::abs(w.at(experts[k]) - ref.shrunk.at(domains[i])[k]));
            }
        }
    }
    const double elapsed = seconds_since(start);
    return {worst <= 1e-9 && elapsed < 5.0,
            format("50 fixtures of 200x3 over 4 domains, max abs diff %.3g (tol 1e-9), %.2f s (limit 5 s)", worst,
                   elapsed)};
}

// 2. Shrinkage never increases risk.
Outcome shrinkage_risk() {
    Rng rng(2);
    std::size_t positive = 0, nonzero_equal = 0, formula_mismatch = 0, strict = 0;
    auto simplex = [&](std::size_t m) {
        std::vector<double> v(m);
        double total = 0.0;
        for (auto& x : v) total += (x = rng.uniform() + 1e-12);
        for (auto& x : v) x /= total;
        return v;
    };
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t m = 2 + rng.index(4);
        const std::size_t domains = 1 + rng.index(10);
        const auto w = simplex(m);
        const auto wbar = simplex(m);
        const double alpha = rng.uniform();
        const double delta = fusion::shrinkage_risk_delta(w, wbar, alpha, domains);
        if (delta > 0.0) ++positive;
        if (delta < 0.0) ++strict;
        double direct = 0.0;
        for (std::size_t k = 0; k < m; ++k) direct += (w[k] - wbar[k]) * (w[k] - wbar[k]);
        direct *= -(1.0 - alpha) * (1.0 - alpha) / static_cast<double>(domains);
        if (std::abs(direct - delta) > 1e-15) ++formula_mismatch;
        if (fusion::shrinkage_risk_delta(w, w, alpha, domains) != 0.0) ++nonzero_equal;
        if (fusion::shrinkage_risk_delta(w, wbar, 1.0, domains) != 0.0) ++nonzero_equal;
    }
    return {positive == 0 && nonzero_equal == 0 && formula_mismatch == 0 && strict == 10000,
            format("10^4 draws: %zu positive, %zu strictly negative, %zu nonzero at w=wbar or alpha=1, "
                   "%zu off the closed form",
                   positive, strict, nonzero_equal, formula_mismatch)};
}

// 3. Scores stay in [0,5] and the stretch is monotone.
Outcome bounds_and_monotonicity() {
    Rng rng(3);
    std::size_t out_of_range = 0, order_violations = 0, refused = 0, wrongly_refused = 0;
    const fusion::FusionConfig cfg;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = 2 + rng.index(40);
        const int mode = static_cast<int>(rng.index(3));
        // Mode 2 pins expert 0 to a constant, so it needs a second expert.
        const std::size_t m = (mode == 2 ? 2 : 1) + rng.index(mode == 2 ? 3 : 4);
        const std::size_t domain_count = 1 + rng.index(3);
        oracle::Matrix rows(n, std::vector<double>(m));
        std::vector<std::string> domains;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < m; ++k) {
                rows[i][k] = mode == 0   ? 5.0 * rng.uniform()
                             : mode == 1 ? static_cast<double>(rng.index(6))
                                         : (k == 0 ? 2.0 : 5.0 * rng.uniform());
            }
            domains.push_back("d" + std::to_string(rng.index(domain_count)));
        }
        try {
            const auto result = fusion::fuse(to_matrix(rows), domains, cfg);
            for (double s : result.fused_score) {
                if (!(s >= 0.0 && s <= 5.0)) ++out_of_range;
            }
        } catch (const ComputeError&) {
            // Only inputs with no signal at all may be refused: every expert
            // constant within every domain, so every raw weight is zero.
            ++refused;
            const auto ref = oracle::fuse(rows, domains);
            for (const auto& [d, w] : ref.raw) {
                for (double v : w) {
                    if (v != 0.0) ++wrongly_refused;
                }
            }
        }

        std::vector<double> z(n);
        for (auto& v : z) v = rng.index(4) == 0 ? std::round(rng.normal(0.0, 2.0)) : rng.normal(0.0, 3.0);
        const auto s = fusion::percentile_rescale(z, cfg);
        for (std::size_t i = 0; i < n; ++i) {
            if (!(s[i] >= 0.0 && s[i] <= 5.0)) ++out_of_range;
            for (std::size_t j = 0; j < n; ++j) {
                if (z[i] < z[j] && s[i] > s[j]) ++order_violations;
            }
        }
    }
    return {out_of_range == 0 && order_violations == 0 && wrongly_refused == 0,
            format("10^4 fuzz cases: %zu scores outside [0,5], %zu ordering violations, %zu signal-free inputs "
                   "refused (%zu refused with signal)",
                   out_of_range, order_violations, refused, wrongly_refused)};
}

// 4. Domain-aware fusion against naive averaging with heteroscedastic experts.
Outcome heteroscedastic_fusion() {
    const auto start = std::chrono::steady_clock::now();
    int beats_naive = 0, beats_all = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(derive_seed(seed, "c4"));
        std::vector<std::array<double, 3>> sigma(4);
        for (auto& row : sigma) {
            row = {0.3, 0.6, 1.2};
            rng.shuffle(std::span<double>(row));
        }
        std::vector<std::shared_ptr<experts::SimulatedExpert>> roster;
        for (std::size_t k = 0; k < 3; ++k) {
            auto p = sim_params(0.0, derive_seed(seed, "c4-expert", std::to_string(k)));
            for (std::size_t d = 0; d < 4; ++d) p.noise_std["domain_" + std::to_string(d)] = sigma[d][k];
            roster.push_back(std::make_shared<experts::SimulatedExpert>("expert_" + std::to_string(k + 1), p));
        }
        const std::size_t n = 1000;
        fusion::ScoreMatrix scores(n, 3);
        std::vector<std::string> domains;
        std::vector<double> latent, naive(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            Sample s;
            s.id = "s" + std::to_string(i);
            s.question = "q";
            s.answer = "a";
            s.domain = "domain_" + std::to_string(i / 250);
            s.latent_truth = 5.0 * rng.uniform();
            domains.push_back(s.domain);
            latent.push_back(*s.latent_truth);
            for (std::size_t k = 0; k < 3; ++k) {
                scores(i, k) = roster[k]->critique({s, s.answer, ""}).score;
                naive[i] += scores(i, k) / 3.0;
            }
        }
        const auto fused = fusion::fuse(scores, domains, fusion::FusionConfig{}).fused_score;
        const double r_fused = eval::pearson_r(fused, latent);
        if (r_fused >= eval::pearson_r(naive, latent)) ++beats_naive;
        bool all = true;
        for (std::size_t k = 0; k < 3; ++k) {
            std::vector<double> column(n);
            for (std::size_t i = 0; i < n; ++i) column[i] = scores(i, k);
            all = all && r_fused >= eval::pearson_r(column, latent);
        }
        if (all) ++beats_all;
    }
    const double elapsed = seconds_since(start);
    return {beats_naive >= 40 && beats_all >= 45 && elapsed < 30.0,
            format("fused >= naive average in %d/50 seeds (need 40), >= every expert in %d/50 (need 45), "
                   "%.2f s (limit 30 s)",
                   beats_naive, beats_all, elapsed)};
}

// 5. Rewards against their closed forms.
Outcome reward_exactness() {
    static const char* markers[] = {"<Question Analysis>", "<Evaluation Reasons>", "<Scoring>"};
    std::size_t cases = 0, mismatches = 0;
    for (int half = 0; half <= 10; ++half) {
        const double fused = 0.5 * half;
        for (int parsed = -1; parsed <= 5; ++parsed) {
            const std::optional<int> p = parsed < 0 ? std::nullopt : std::optional<int>(parsed);
            const double expected = p ? std::max(0.0, 1.0 - std::abs(parsed - fused) / 5.0) : 0.0;
            ++cases;
            if (std::abs(rewards::accuracy_reward(p, fused) - expected) > 1e-12) ++mismatches;
        }
        for (int mask = 0; mask < 8; ++mask) {
            for (int digit = 0; digit <= 5; ++digit) {
                std::string text;
                int present = 0;
                for (int b = 0; b < 3; ++b) {
                    if (!(mask & (1 << b))) continue;
                    ++present;
                    text += markers[b];
                    text += b == 2 ? " " + std::to_string(digit) + " </Scoring> " : " notes ";
                }
                const double fmt = 0.5 * present / 3.0;
                const double acc = (mask & 4) ? std::max(0.0, 1.0 - std::abs(digit - fused) / 5.0) : 0.0;
                ++cases;
                if (std::abs(rewards::format_reward(text) - fmt) > 1e-12) ++mismatches;
                if (std::abs(rewards::total_reward(text, fused) - (acc + fmt)) > 1e-12) ++mismatches;
            }
        }
    }
    return {mismatches == 0, format("%zu grid cases (parsed x round(2S)/2, 8 marker subsets), %zu mismatches", cases,
                                    mismatches)};
}

// Every token ratio sits away from the clip boundaries, where the
// objective is not differentiable.
bool away_from_kinks(const grpo::RolloutGroup& group, const grpo::ToyPolicy& policy, double eps) {
    for (const auto& r : group.rollouts) {
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            const double ratio = std::exp(policy.log_prob(t, r.tokens[t]) - r.old_log_probs[t]);
            if (std::abs(ratio - (1.0 - eps)) < 1e-4 || std::abs(ratio - (1.0 + eps)) < 1e-4) return false;
        }
    }
    return true;
}

// 6. Analytic GRPO gradient against central differences.
Outcome gradient_check() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(6);
    const grpo::GrpoConfig cfg{0.2, 0.01, 5, 1e-8};
    auto random_policy = [&](std::size_t positions, std::size_t vocab, double scale) {
        std::vector<double> theta(positions * vocab);
        for (auto& x : theta) x = rng.normal(0.0, scale);
        return grpo::ToyPolicy(positions, vocab, theta);
    };
    int checked = 0, skipped = 0;
    double worst = 0.0;
    while (checked < 100) {
        const std::size_t positions = 1 + rng.index(2);
        const std::size_t vocab = 2 + rng.index(4);
        const auto old = random_policy(positions, vocab, 1.0);
        std::vector<double> theta(old.theta().begin(), old.theta().end());
        for (auto& x : theta) x += rng.normal(0.0, 0.3);
        const grpo::ToyPolicy policy(positions, vocab, theta);
        const auto ref = random_policy(positions, vocab, 1.0);
        std::vector<std::vector<int>> seqs;
        std::vector<double> rewards;
        for (std::size_t i = 0; i < cfg.group_size; ++i) {
            seqs.push_back(old.sample(rng));
            rewards.push_back(1.5 * rng.uniform());
        }
        const auto group = grpo::make_group("q", seqs, rewards, old);
        if (!away_from_kinks(group, policy, cfg.clip_eps)) {
            ++skipped;
            continue;
        }
        ++checked;
        const auto analytic = grpo::grpo_gradient(group, policy, ref, cfg);
        const auto numeric = oracle::central_gradient(
            [&](const std::vector<double>& t) {
                return grpo::grpo_objective(group, grpo::ToyPolicy(positions, vocab, t), ref, cfg);
            },
            theta, 1e-6);
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double scale = std::max(std::abs(analytic[k]), std::abs(numeric[k]));
            if (scale < 1e-10) continue;
            worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / scale);
        }
    }
    const double elapsed = seconds_since(start);
    return {worst < 1e-4 && elapsed < 10.0,
            format("100 policies with <= 10 parameters (clip 0.2, beta 0.01; %d draws on a clip kink redrawn), "
                   "max rel err %.3g (tol 1e-4), %.2f s (limit 10 s)",
                   skipped, worst, elapsed)};
}

// 7. The template that always earns 1.5 gains probability.
Outcome learning_sanity() {
    using namespace grpo;
    const std::vector<int> best{QuestionAnalysis, EvaluationReasons, Scoring, Digit3};
    const double target = 3.0;
    if (rewards::total_reward(render_tokens(best), target) != 1.5) return {false, "template does not earn 1.5"};
    int improved = 0;
    double lowest_gain = 1.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(derive_seed(seed, "c7"));
        ToyPolicy policy(4, kVocabSize);
        const ToyPolicy ref = policy;
        const double before = std::exp(policy.sequence_log_prob(best));
        for (int step = 0; step < 200; ++step) {
            std::vector<std::vector<int>> seqs{best};
            std::vector<double> rewards{1.5};
            for (int i = 0; i < 7; ++i) {
                seqs.push_back(policy.sample(rng));
                rewards.push_back(rewards::total_reward(render_tokens(seqs.back()), target));
            }
            const auto group = make_group("q", seqs, rewards, policy);
            policy = grpo_step(std::span(&group, 1), policy, ref, GrpoConfig{}, 0.5);
        }
        const double after = std::exp(policy.sequence_log_prob(best));
        if (after > before) ++improved;
        lowest_gain = std::min(lowest_gain, after - before);
    }
    return {improved >= 8, format("probability rose over 200 steps in %d/10 seeds (need 8), smallest gain %.4f",
                                  improved, lowest_gain)};
}

// 8. Correlations against brute-force oracles.
Outcome correlation_oracles() {
    Rng rng(8);
    int cases = 0;
    double worst_tau = 0.0, worst_r = 0.0;
    while (cases < 1000) {
        const std::size_t n = 2 + rng.index(199);
        const bool ties = rng.index(2) == 0;
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = ties ? static_cast<double>(rng.index(6)) : rng.normal();
            y[i] = ties ? static_cast<double>(rng.index(6)) : rng.normal();
        }
        const bool flat = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
                          std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
        if (flat) continue;
        ++cases;
        worst_tau = std::max(worst_tau, std::abs(eval::kendall_tau(x, y) - oracle::kendall_pairs(x, y)));
        worst_r = std::max(worst_r, std::abs(eval::pearson_r(x, y) - oracle::pearson_direct(x, y)));
    }
    return {worst_tau <= 1e-12 && worst_r <= 1e-12,
            format("10^3 cases with n <= 200: max |tau diff| %.3g, max |r diff| %.3g (tol 1e-12)", worst_tau,
                   worst_r)};
}

// 9. Tiered error injection.
Outcome error_injection() {
    const auto items = fixtures::clevr_items(500, 9);
    const auto tiered = build_tiered_set(items, {160, 170, 170}, 9);
    std::map<Tier, int> count;
    int violations = 0;
    for (const auto& t : tiered) {
        ++count[t.tier];
        if (t.tier == Tier::H && t.answer != t.original_answer) ++violations;
        if (t.tier == Tier::M &&
            (t.answer == t.original_answer || classify_answer(t.answer) != classify_answer(t.original_answer))) {
            ++violations;
        }
        if (t.tier == Tier::L && !is_low_tier_corruption(t.original_answer, t.answer)) ++violations;
    }
    auto reachable = [](const std::string& from, const std::string& to, bool medium) {
        QaItem item;
        item.id = "literal";
        item.question = "?";
        item.answer = item.original_answer = from;
        item.answer_category = classify_answer(from);
        for (std::uint64_t s = 0; s < 400; ++s) {
            Rng rng(derive_seed(s, "literal"));
            if ((medium ? inject_medium(item, rng) : inject_low(item, rng)) == to) return true;
        }
        return false;
    };
    const bool literals = reachable("4.", "5.", true) && reachable("Green.", "Blue.", true) &&
                          reachable("Yes.", "No.", false) && reachable("3.", "Red.", false);
    const bool split = count[Tier::H] == 160 && count[Tier::M] == 170 && count[Tier::L] == 170;
    return {split && violations == 0 && literals,
            format("split %d/%d/%d (want 160/170/170), %d tier violations, literal examples %s", count[Tier::H],
                   count[Tier::M], count[Tier::L], violations, literals ? "reachable" : "NOT reachable")};
}

// 10. run-all against the mock HTTP roster.
Outcome end_to_end() {
    const auto dir = fs::temp_directory_path() / "refinery_acceptance_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto samples = fixtures::synthetic_corpus(100, 4, 10);
    save_records(samples, dir / "corpus.jsonl");
    save_records(fixtures::synthetic_priors(samples), dir / "priors.jsonl");

    experts::MockScript script;
    const double sigma[] = {0.3, 0.6, 1.0};
    const double rewrite_bias[] = {0.0, 0.4, -0.2};
    for (int k = 0; k < 3; ++k) {
        auto p = sim_params(sigma[k], 100 + k);
        p.rewrite_bias = rewrite_bias[k];
        script.experts["expert_" + std::to_string(k + 1)] = p;
    }
    for (const auto& s : samples) script.samples[s.id] = s;
    script.drop_first_attempts = 1;
    experts::MockExpertServer server(script);
    server.start();

    json roster = json::array();
    for (int k = 1; k <= 3; ++k) {
        const auto id = "expert_" + std::to_string(k);
        roster.push_back(json{{"expert_id", id},
                          {"kind", "http"},
                          {"endpoint", server.endpoint_for(id)},
                          {"retry", {{"initial_backoff_ms", 5}}}});
    }
    const json doc{{"paths", {{"corpus", "corpus.jsonl"}, {"priors", "priors.jsonl"}, {"output_dir", "out"}}},
                   {"roster", roster},
                   {"seed", 42},
                   {"concurrency_limit", 8}};
    const auto config = parse_config(doc, dir);
    const auto out = dir / "out";
    const std::vector<std::string> artifacts{
        pipeline::files::kPriors,   pipeline::files::kCritiques, pipeline::files::kFused,
        pipeline::files::kRollouts, pipeline::files::kCurve,     pipeline::files::kPolicy,
        pipeline::files::kRewrites, pipeline::files::kCandidates, pipeline::files::kRefined};

    const auto start = std::chrono::steady_clock::now();
    const auto first = pipeline::run_all(config);
    const double elapsed = seconds_since(start);
    std::vector<std::string> snapshot;
    for (const auto& name : artifacts) snapshot.push_back(read_file(out / name));

    const auto refined = load_records<RefinedEntry>(out / pipeline::files::kRefined);
    const auto pools = load_records<CandidatePool>(out / pipeline::files::kCandidates);
    int argmax_failures = 0;
    for (std::size_t i = 0; i < refined.size() && i < pools.size(); ++i) {
        const auto& pool = pools[i];
        const double best = *std::max_element(pool.rescored.begin(), pool.rescored.end());
        bool ok = pool.sample_id == refined[i].sample_id;
        bool matched = false;
        for (std::size_t k = 0; k < pool.candidates.size(); ++k) {
            if (pool.candidates[k].source == refined[i].selected_source) {
                matched = pool.candidates[k].answer == refined[i].selected_answer && pool.rescored[k] == best;
            }
        }
        if (!(ok && matched)) ++argmax_failures;
    }

    const auto second = pipeline::run_all(config);
    int differing = 0;
    for (std::size_t k = 0; k < artifacts.size(); ++k) {
        if (read_file(out / artifacts[k]) != snapshot[k]) ++differing;
    }
    if (pipeline::to_json(first, false) != pipeline::to_json(second, false)) ++differing;
    const auto dropped = server.requests_dropped();
    server.stop();

    const bool sized = refined.size() == 100 && first.refined_samples == 100 && pools.size() == 100;
    return {sized && argmax_failures == 0 && differing == 0 && elapsed < 60.0,
            format("|D_refine| = %zu of 100, %d non-argmax selections, %d differing artifacts on rerun, "
                   "%zu dropped requests retried, %.2f s (limit 60 s)",
                   refined.size(), argmax_failures, differing, dropped, elapsed)};
}

// 11. A sigma = 0.5 critic separates the quality tiers.
Outcome tier_separation() {
    int above = 0;
    double lowest = 1.0, total = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto tiered = build_tiered_set(fixtures::clevr_items(500, seed), {160, 170, 170}, seed);
        const experts::SimulatedExpert critic("critic", sim_params(0.5, derive_seed(seed, "c11")));
        std::vector<double> scores, reference;
        for (const auto& item : tiered) {
            Sample s;
            s.id = item.id;
            s.question = item.question;
            s.answer = item.answer;
            s.domain = to_string(item.answer_category);
            s.latent_truth = item.reference_score;
            scores.push_back(critic.critique({s, s.answer, ""}).score);
            reference.push_back(item.reference_score);
        }
        const double tau = eval::kendall_tau(scores, reference);
        if (tau > 0.8) ++above;
        lowest = std::min(lowest, tau);
        total += tau;
    }
    return {above == 10, format("tau-b above 0.8 in %d/10 seeds, min %.4f, mean %.4f", above, lowest, total / 10.0)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"fusion oracle equivalence", fusion_oracle},
        {"shrinkage risk inequality", shrinkage_risk},
        {"bounds and monotonicity", bounds_and_monotonicity},
        {"fusion beats naive averaging under heteroscedasticity", heteroscedastic_fusion},
        {"reward exactness", reward_exactness},
        {"GRPO gradient check", gradient_check},
        {"GRPO learning sanity", learning_sanity},
        {"correlation oracles", correlation_oracles},
        {"error injection fidelity", error_injection},
        {"end-to-end determinism and size preservation", end_to_end},
        {"tiered-set critic separation", tier_separation},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome outcome;
        try {
            outcome = criteria[i].second();
        } catch (const std::exception& e) {
            outcome = {false, std::string("threw: ") + e.what()};
        }
        if (!outcome.pass) ++failures;
        std::printf("%s  %2zu  %s: %s\n", outcome.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    outcome.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
