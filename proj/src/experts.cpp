#include "refinery/experts.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>
#include <tuple>

#include "refinery/errors.hpp"
#include "refinery/random.hpp"

namespace refinery::experts {

namespace {

constexpr std::string_view kQualityTag = " [sim-quality=";

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    if (parts.empty()) return "(none)";
    std::string out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        out += sep;
        out += parts[i];
    }
    return out;
}

std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

void replace_all(std::string& text, std::string_view key, const std::string& value) {
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
        text.replace(pos, key.size(), value);
    }
}

std::string synthesize_rationale(const Sample& sample, double score) {
    return "<Question Analysis> The question asks: " + sample.question +
           " <Evaluation Reasons> Checked against the detected objects and text, the answer quality is about " +
           format_score(score) + " on the 0-5 rubric. <Scoring> " +
           std::to_string(static_cast<int>(std::lround(score))) + " </Scoring>";
}

void throw_for_failures(const std::vector<RequestFailure>& failures, const char* what) {
    if (failures.empty()) return;
    const auto& f = failures.front();
    std::string msg = std::string(what) + " failed for " + std::to_string(failures.size()) +
                      " request(s); first: sample '" + f.sample_id + "', expert '" + f.expert_id + "': " + f.message;
    const bool all_validation =
        std::all_of(failures.begin(), failures.end(), [](const RequestFailure& r) { return r.validation; });
    if (all_validation) throw ValidationError(msg);
    throw BackendError(msg);
}

template <typename Fn>
void capture_failure(std::optional<RequestFailure>& slot, const std::string& sample_id, const std::string& expert_id,
                     Fn&& fn) {
    try {
        fn();
    } catch (const ValidationError& e) {
        slot = RequestFailure{sample_id, expert_id, e.what(), true};
    } catch (const std::exception& e) {
        slot = RequestFailure{sample_id, expert_id, e.what(), false};
    }
}

}  // namespace

std::string serialize_vision_prior(const VisionPrior& prior) {
    return "Detected objects: " + join(prior.tags, ", ") + "\nDetected text: " + join(prior.ocr, " | ");
}

std::string to_string(Rubric rubric) { return rubric == Rubric::Critique ? "critique" : "rewrite"; }

const std::string& default_template(Rubric rubric) {
    static const std::string critique =
        "You are an expert evaluator of visual question answering data.\n"
        "Visual evidence:\n{prior}\n\nQuestion: {question}\nAnswer: {answer}\n\n"
        "Respond with <Question Analysis>, <Evaluation Reasons> and <Scoring> sections; "
        "the score is an integer from 0 to 5.";
    static const std::string rewrite =
        "You are improving the answer to a visual question.\n"
        "Visual evidence:\n{prior}\n\nQuestion: {question}\nOriginal answer: {answer}\n"
        "Critique: {rationale}\nConsensus quality score: {fused_score}\n\n"
        "Write an improved answer that fixes every issue raised in the critique.";
    return rubric == Rubric::Critique ? critique : rewrite;
}

std::string render_prompt(const PromptBundle& bundle, const std::string& tmpl) {
    std::string out = tmpl;
    replace_all(out, "{question}", bundle.question);
    replace_all(out, "{answer}", bundle.answer);
    replace_all(out, "{prior}", bundle.serialized_prior);
    replace_all(out, "{rationale}", bundle.rationale.value_or(""));
    replace_all(out, "{fused_score}", bundle.fused_score ? format_score(*bundle.fused_score) : "");
    return out;
}

double SimulatedExpertParams::noise_for(const std::string& domain) const {
    auto it = noise_std.find(domain);
    return it == noise_std.end() ? default_noise_std : it->second;
}

double SimulatedExpertParams::bias_for(const std::string& domain) const {
    auto it = bias.find(domain);
    return it == bias.end() ? default_bias : it->second;
}

void SimulatedExpertParams::validate() const {
    if (!(default_noise_std >= 0.0)) throw ConfigError("simulated expert noise std must be >= 0");
    for (const auto& [domain, s] : noise_std) {
        if (!(s >= 0.0)) throw ConfigError("simulated expert noise std for '" + domain + "' must be >= 0");
    }
}

std::string annotate_quality(const std::string& answer, double quality) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", quality);
    return strip_quality(answer) + std::string(kQualityTag) + buf + "]";
}

std::optional<double> annotated_quality(const std::string& answer) {
    const auto pos = answer.rfind(kQualityTag);
    if (pos == std::string::npos || answer.back() != ']') return std::nullopt;
    const auto start = pos + kQualityTag.size();
    try {
        std::size_t used = 0;
        const std::string number = answer.substr(start, answer.size() - 1 - start);
        const double q = std::stod(number, &used);
        if (used != number.size()) return std::nullopt;
        return q;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::string strip_quality(const std::string& answer) {
    if (!annotated_quality(answer)) return answer;
    return answer.substr(0, answer.rfind(kQualityTag));
}

SimulatedExpert::SimulatedExpert(std::string expert_id, SimulatedExpertParams params)
    : id_(std::move(expert_id)), params_(std::move(params)) {
    params_.validate();
}

double SimulatedExpert::noise_draw(const std::string& sample_id, const std::string& purpose,
                                   const std::string& answer) const {
    Rng rng(derive_seed(params_.seed, id_, sample_id, purpose, answer));
    return rng.normal();
}

CritiqueResponse SimulatedExpert::critique(const CritiqueRequest& request) const {
    const auto& sample = request.sample;
    std::optional<double> latent = annotated_quality(request.answer);
    if (!latent) {
        if (request.answer != sample.answer && !request.answer.empty()) {
            throw ValidationError("simulated expert cannot score unannotated answer for sample '" + sample.id + "'");
        }
        latent = sample.latent_truth;
    }
    if (!latent) {
        throw ValidationError("simulated critique needs latent_truth for sample '" + sample.id + "'");
    }
    const double sigma = params_.noise_for(sample.domain);
    const double eta = sigma * noise_draw(sample.id, "critique", request.answer);
    const double score = std::clamp(*latent + params_.bias_for(sample.domain) + eta, kScoreMin, kScoreMax);
    return {score, synthesize_rationale(sample, score)};
}

std::string SimulatedExpert::rewrite(const RewriteRequest& request) const {
    const auto& sample = request.sample;
    if (!sample.latent_truth) {
        throw ValidationError("simulated rewrite needs latent_truth for sample '" + sample.id + "'");
    }
    const double sigma = params_.noise_for(sample.domain);
    const double eta = sigma * noise_draw(sample.id, "rewrite", sample.answer);
    const double draw = std::clamp(request.fused_score + params_.rewrite_bias + eta, kScoreMin, kScoreMax);
    const double quality = std::max(*sample.latent_truth, draw);
    return annotate_quality(strip_quality(sample.answer) + " (revised by " + id_ + ")", quality);
}

void parallel_for(std::size_t count, std::size_t limit, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(limit, count));
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::size_t error_index = count;
    std::exception_ptr error;

    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (i < error_index) {
                    error_index = i;
                    error = std::current_exception();
                }
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (error) std::rethrow_exception(error);
}

CritiqueBatch request_critiques(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                                const Roster& roster, std::size_t concurrency_limit, bool allow_partial) {
    if (roster.empty()) throw ConfigError("expert roster is empty");
    if (priors.size() != samples.size()) throw ValidationError("every sample needs a prior entry");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (priors[i].sample_id != samples[i].id) {
            throw ValidationError("prior for '" + priors[i].sample_id + "' is not aligned with sample '" +
                                  samples[i].id + "'");
        }
    }

    const std::size_t m = roster.size();
    std::vector<std::optional<CritiqueRecord>> results(samples.size() * m);
    std::vector<std::optional<RequestFailure>> failures(samples.size() * m);
    parallel_for(results.size(), concurrency_limit, [&](std::size_t k) {
        const auto& sample = samples[k / m];
        const auto& expert = *roster[k % m];
        capture_failure(failures[k], sample.id, expert.expert_id(), [&] {
            const CritiqueRequest request{sample, sample.answer, serialize_vision_prior(priors[k / m])};
            auto response = expert.critique(request);
            if (!(response.score >= kScoreMin && response.score <= kScoreMax)) {
                throw ValidationError("score out of [0,5]: " + std::to_string(response.score));
            }
            results[k] = CritiqueRecord{sample.id, expert.expert_id(), response.score, std::move(response.rationale)};
        });
    });

    CritiqueBatch batch;
    for (auto& r : results) {
        if (r) batch.records.push_back(std::move(*r));
    }
    for (auto& f : failures) {
        if (f) batch.failures.push_back(std::move(*f));
    }
    std::sort(batch.records.begin(), batch.records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.sample_id, a.expert_id) < std::tie(b.sample_id, b.expert_id);
    });
    if (!allow_partial) throw_for_failures(batch.failures, "critique");
    return batch;
}

RewriteBatch request_rewrites(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                              std::span<const CritiqueRecord> critiques, std::span<const FusedLabel> fused,
                              const Roster& roster, std::size_t concurrency_limit, bool allow_partial) {
    if (roster.empty()) throw ConfigError("expert roster is empty");
    if (priors.size() != samples.size()) throw ValidationError("every sample needs a prior entry");

    std::map<std::pair<std::string, std::string>, const CritiqueRecord*> critique_of;
    for (const auto& c : critiques) critique_of[{c.sample_id, c.expert_id}] = &c;
    std::map<std::string, double> fused_of;
    for (const auto& f : fused) fused_of[f.sample_id] = f.fused_score;

    const std::size_t m = roster.size();
    std::vector<std::optional<RewriteRecord>> results(samples.size() * m);
    std::vector<std::optional<RequestFailure>> failures(samples.size() * m);
    parallel_for(results.size(), concurrency_limit, [&](std::size_t k) {
        const auto& sample = samples[k / m];
        const auto& expert = *roster[k % m];
        capture_failure(failures[k], sample.id, expert.expert_id(), [&] {
            auto c = critique_of.find({sample.id, expert.expert_id()});
            auto f = fused_of.find(sample.id);
            if (c == critique_of.end() || f == fused_of.end()) {
                throw ValidationError("missing critique or fused label");
            }
            const RewriteRequest request{sample, serialize_vision_prior(priors[k / m]), c->second->rationale,
                                         f->second};
            auto answer = expert.rewrite(request);
            if (answer.empty()) throw ValidationError("empty rewrite");
            results[k] = RewriteRecord{sample.id, expert.expert_id(), std::move(answer)};
        });
    });

    RewriteBatch batch;
    for (auto& r : results) {
        if (r) batch.records.push_back(std::move(*r));
    }
    for (auto& f : failures) {
        if (f) batch.failures.push_back(std::move(*f));
    }
    std::sort(batch.records.begin(), batch.records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.sample_id, a.expert_id) < std::tie(b.sample_id, b.expert_id);
    });
    if (!allow_partial) throw_for_failures(batch.failures, "rewrite");
    return batch;
}

}  // namespace refinery::experts
