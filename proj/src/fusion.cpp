#include "refinery/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "refinery/errors.hpp"

namespace refinery::fusion {

namespace {

void require_aligned(const ScoreMatrix& scores, std::span<const std::string> domains) {
    if (scores.samples() == 0) {
        throw ComputeError("empty corpus: no samples to fuse");
    }
    if (domains.size() != scores.samples()) {
        throw ComputeError("domain labels (" + std::to_string(domains.size()) + ") do not match samples (" +
                           std::to_string(scores.samples()) + ")");
    }
    scores.require_complete();
}

}  // namespace

void ScoreMatrix::require_complete() const {
    for (std::size_t n = 0; n < samples_; ++n) {
        for (std::size_t m = 0; m < experts_; ++m) {
            if (std::isnan((*this)(n, m))) {
                throw ComputeError("incomplete score matrix: sample " + std::to_string(n) + " lacks expert " +
                                   std::to_string(m));
            }
        }
    }
}

void FusionConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("fusion.epsilon must be > 0");
    if (!(lambda >= 0.0)) throw ConfigError("fusion.lambda must be >= 0");
    if (!(q_low_pct >= 0.0 && q_low_pct < q_high_pct && q_high_pct <= 1.0)) {
        throw ConfigError("fusion quantiles must satisfy 0 <= q_low_pct < q_high_pct <= 1");
    }
    if (!(scale_max > 0.0)) throw ConfigError("fusion.scale_max must be > 0");
}

DomainStats compute_domain_stats(const ScoreMatrix& scores, std::span<const std::string> domains) {
    require_aligned(scores, domains);
    const std::size_t experts = scores.experts();

    DomainStats stats;
    for (std::size_t n = 0; n < scores.samples(); ++n) {
        auto& entry = stats[domains[n]];
        if (entry.count == 0) {
            entry.mean.assign(experts, 0.0);
            entry.stddev.assign(experts, 0.0);
        }
        ++entry.count;
        for (std::size_t m = 0; m < experts; ++m) entry.mean[m] += scores(n, m);
    }
    for (auto& [_, entry] : stats) {
        for (auto& mu : entry.mean) mu /= static_cast<double>(entry.count);
    }
    for (std::size_t n = 0; n < scores.samples(); ++n) {
        auto& entry = stats[domains[n]];
        for (std::size_t m = 0; m < experts; ++m) {
            const double d = scores(n, m) - entry.mean[m];
            entry.stddev[m] += d * d;
        }
    }
    for (auto& [_, entry] : stats) {
        for (auto& s : entry.stddev) s = std::sqrt(s / static_cast<double>(entry.count));
    }
    return stats;
}

ScoreMatrix normalize_scores(const ScoreMatrix& scores, std::span<const std::string> domains,
                             const DomainStats& stats, double epsilon) {
    ScoreMatrix z(scores.samples(), scores.experts());
    for (std::size_t n = 0; n < scores.samples(); ++n) {
        auto it = stats.find(domains[n]);
        if (it == stats.end()) throw ComputeError("no statistics for domain '" + domains[n] + "'");
        for (std::size_t m = 0; m < scores.experts(); ++m) {
            z(n, m) = z_normalize(scores(n, m), it->second.mean[m], it->second.stddev[m], epsilon);
        }
    }
    return z;
}

WeightMap compute_raw_weights(const ScoreMatrix& scores, std::span<const std::string> domains, double epsilon) {
    require_aligned(scores, domains);
    const std::size_t experts = scores.experts();

    // Residuals against the per-sample consensus, laid out like `scores`.
    ScoreMatrix residual(scores.samples(), experts);
    for (std::size_t n = 0; n < scores.samples(); ++n) {
        double consensus = 0.0;
        for (std::size_t m = 0; m < experts; ++m) consensus += scores(n, m);
        consensus /= static_cast<double>(experts);
        for (std::size_t m = 0; m < experts; ++m) residual(n, m) = scores(n, m) - consensus;
    }

    const auto signal = compute_domain_stats(scores, domains);
    const auto noise = compute_domain_stats(residual, domains);

    WeightMap raw;
    for (const auto& [domain, entry] : signal) {
        const auto& noise_entry = noise.at(domain);
        auto& row = raw[domain];
        row.resize(experts);
        for (std::size_t m = 0; m < experts; ++m) {
            row[m] = entry.stddev[m] / (noise_entry.stddev[m] + epsilon);
        }
    }
    return raw;
}

WeightTable shrink_weights(const WeightMap& raw, const std::map<std::string, std::size_t>& counts, double lambda) {
    if (raw.empty()) throw ComputeError("no domains to shrink");
    if (lambda < 0.0) throw ComputeError("lambda must be >= 0");
    const std::size_t experts = raw.begin()->second.size();

    WeightTable table;
    table.raw = raw;
    table.global_mean.assign(experts, 0.0);
    for (const auto& [domain, row] : raw) {
        if (row.size() != experts) throw ComputeError("raw weight rows have different expert counts");
        for (std::size_t m = 0; m < experts; ++m) {
            if (!std::isfinite(row[m]) || row[m] < 0.0) {
                throw ComputeError("raw weight for domain '" + domain + "' is negative or not finite");
            }
            table.global_mean[m] += row[m];
        }
    }
    for (auto& w : table.global_mean) w /= static_cast<double>(raw.size());

    for (const auto& [domain, row] : raw) {
        auto it = counts.find(domain);
        const double n_d = it == counts.end() ? 0.0 : static_cast<double>(it->second);
        // lambda = 0 with an empty domain would be 0/0; treat it as no shrinkage.
        const double alpha = n_d + lambda > 0.0 ? n_d / (n_d + lambda) : 1.0;
        table.alpha[domain] = alpha;

        std::vector<double> shrunk(experts);
        double total = 0.0;
        for (std::size_t m = 0; m < experts; ++m) {
            shrunk[m] = alpha * row[m] + (1.0 - alpha) * table.global_mean[m];
            total += shrunk[m];
        }
        if (!(total > 0.0)) {
            throw ComputeError("degenerate weights: all shrunk weights for domain '" + domain + "' are zero");
        }
        for (auto& w : shrunk) w /= total;
        table.shrunk.emplace(domain, std::move(shrunk));
    }
    return table;
}

std::vector<double> fuse_samples(const ScoreMatrix& z, const WeightTable& weights,
                                 std::span<const std::string> domains) {
    std::vector<double> fused(z.samples());
    for (std::size_t n = 0; n < z.samples(); ++n) {
        auto it = weights.shrunk.find(domains[n]);
        if (it == weights.shrunk.end()) {
            throw ComputeError("missing weights for domain '" + domains[n] + "'");
        }
        double acc = 0.0;
        for (std::size_t m = 0; m < z.experts(); ++m) acc += it->second[m] * z(n, m);
        fused[n] = acc;
    }
    return fused;
}

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ComputeError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> percentile_rescale(std::span<const double> z_values, const FusionConfig& config) {
    if (z_values.empty()) return {};
    std::vector<double> sorted(z_values.begin(), z_values.end());
    std::sort(sorted.begin(), sorted.end());
    const double q_low = quantile_sorted(sorted, config.q_low_pct);
    const double q_high = quantile_sorted(sorted, config.q_high_pct);
    const double span = q_high - q_low;

    std::vector<double> out(z_values.size());
    if (span < config.epsilon) {
        std::fill(out.begin(), out.end(), config.scale_max / 2.0);
        return out;
    }
    for (std::size_t i = 0; i < z_values.size(); ++i) {
        out[i] = config.scale_max * std::clamp((z_values[i] - q_low) / span, 0.0, 1.0);
    }
    return out;
}

FusionResult fuse(const ScoreMatrix& scores, std::span<const std::string> domains, const FusionConfig& config) {
    config.validate();
    FusionResult result;
    result.stats = compute_domain_stats(scores, domains);
    result.z = normalize_scores(scores, domains, result.stats, config.epsilon);

    std::map<std::string, std::size_t> counts;
    for (const auto& [domain, entry] : result.stats) counts[domain] = entry.count;
    result.weights = shrink_weights(compute_raw_weights(scores, domains, config.epsilon), counts, config.lambda);

    result.fused_z = fuse_samples(result.z, result.weights, domains);
    result.fused_score = percentile_rescale(result.fused_z, config);
    return result;
}

std::vector<FusedLabel> fuse_pipeline(const ScoreMatrix& scores, std::span<const std::string> domains,
                                      std::span<const std::string> sample_ids,
                                      std::span<const std::string> expert_ids, const FusionConfig& config) {
    if (sample_ids.size() != scores.samples() || expert_ids.size() != scores.experts()) {
        throw ComputeError("sample/expert ids do not match the score matrix shape");
    }
    const auto result = fuse(scores, domains, config);
    std::vector<FusedLabel> labels;
    labels.reserve(scores.samples());
    for (std::size_t n = 0; n < scores.samples(); ++n) {
        FusedLabel label{sample_ids[n], result.fused_score[n], result.fused_z[n], {}};
        const auto& row = result.weights.shrunk.at(domains[n]);
        auto& per_expert = label.weights_used[domains[n]];
        for (std::size_t m = 0; m < expert_ids.size(); ++m) per_expert[expert_ids[m]] = row[m];
        labels.push_back(std::move(label));
    }
    return labels;
}

double expected_risk(std::span<const double> weights, std::span<const double> noise_vars) {
    if (weights.size() != noise_vars.size()) throw ComputeError("weights and variances differ in length");
    double risk = 0.0;
    for (std::size_t m = 0; m < weights.size(); ++m) risk += weights[m] * weights[m] * noise_vars[m];
    return risk;
}

std::vector<double> inverse_variance_weights(std::span<const double> noise_vars) {
    if (noise_vars.empty()) throw ComputeError("no variances");
    std::vector<double> w(noise_vars.size(), 0.0);
    const auto zeros = std::count(noise_vars.begin(), noise_vars.end(), 0.0);
    if (zeros > 0) {
        for (std::size_t m = 0; m < w.size(); ++m) {
            if (noise_vars[m] == 0.0) w[m] = 1.0 / static_cast<double>(zeros);
        }
        return w;
    }
    double total = 0.0;
    for (std::size_t m = 0; m < w.size(); ++m) {
        if (noise_vars[m] < 0.0) throw ComputeError("negative variance");
        w[m] = 1.0 / noise_vars[m];
        total += w[m];
    }
    for (auto& x : w) x /= total;
    return w;
}

double shrinkage_risk_delta(std::span<const double> domain_weights, std::span<const double> global_mean,
                            double alpha, std::size_t num_domains) {
    if (domain_weights.size() != global_mean.size()) throw ComputeError("weight vectors differ in length");
    if (num_domains == 0) throw ComputeError("num_domains must be positive");
    double sq = 0.0;
    for (std::size_t m = 0; m < domain_weights.size(); ++m) {
        const double d = domain_weights[m] - global_mean[m];
        sq += d * d;
    }
    const double shrink = (1.0 - alpha) * (1.0 - alpha);
    return -(shrink / static_cast<double>(num_domains)) * sq;
}

}  // namespace refinery::fusion
