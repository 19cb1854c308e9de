#pragma once

// Domain-aware expert score fusion.
//
// Per-domain z-normalization of each expert, signal-to-noise weights,
// empirical-Bayes shrinkage of those weights toward the cross-domain mean,
// weighted fusion, and a robust percentile stretch back onto [0, scale_max].
// The risk helpers at the bottom expose the squared-error analysis that
// motivates the weights.

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refinery/corpus.hpp"

namespace refinery::fusion {

/// Dense samples x experts matrix. NaN marks a missing score.
class ScoreMatrix {
public:
    ScoreMatrix() = default;
    ScoreMatrix(std::size_t samples, std::size_t experts)
        : samples_(samples), experts_(experts), data_(samples * experts, std::numeric_limits<double>::quiet_NaN()) {}

    std::size_t samples() const { return samples_; }
    std::size_t experts() const { return experts_; }

    double& operator()(std::size_t n, std::size_t m) { return data_[n * experts_ + m]; }
    double operator()(std::size_t n, std::size_t m) const { return data_[n * experts_ + m]; }

    std::span<const double> row(std::size_t n) const { return {data_.data() + n * experts_, experts_}; }

    /// Throws ComputeError naming the first missing (sample, expert) cell.
    void require_complete() const;

private:
    std::size_t samples_ = 0;
    std::size_t experts_ = 0;
    std::vector<double> data_;
};

struct FusionConfig {
    double epsilon = 1e-3;
    double lambda = 100.0;
    double q_low_pct = 0.05;
    double q_high_pct = 0.95;
    double scale_max = 5.0;

    /// Throws ConfigError on epsilon <= 0, lambda < 0 or a bad quantile pair.
    void validate() const;
};

struct DomainEntry {
    std::vector<double> mean;    // per expert
    std::vector<double> stddev;  // per expert, population
    std::size_t count = 0;
};

/// Keyed by domain label.
using DomainStats = std::map<std::string, DomainEntry>;

/// domain -> per-expert weight.
using WeightMap = std::map<std::string, std::vector<double>>;

struct WeightTable {
    WeightMap raw;
    WeightMap shrunk;  // each row sums to 1
    std::vector<double> global_mean;
    std::map<std::string, double> alpha;
};

/// Population mean/std of every expert inside every domain.
DomainStats compute_domain_stats(const ScoreMatrix& scores, std::span<const std::string> domains);

/// (score - mu) / (sigma + epsilon).
inline double z_normalize(double score, double mu, double sigma, double epsilon) {
    return (score - mu) / (sigma + epsilon);
}

/// z-normalizes every cell with the statistics of its sample's domain.
ScoreMatrix normalize_scores(const ScoreMatrix& scores, std::span<const std::string> domains,
                             const DomainStats& stats, double epsilon);

/// Signal std over residual-noise std, per (domain, expert). The residual is
/// the expert's deviation from the per-sample cross-expert mean.
WeightMap compute_raw_weights(const ScoreMatrix& scores, std::span<const std::string> domains, double epsilon);

/// Shrinks each domain's weights toward the cross-domain mean with
/// alpha_d = N_d / (N_d + lambda), then normalizes every domain to sum 1.
/// Domains missing from `counts` are treated as N_d = 0.
WeightTable shrink_weights(const WeightMap& raw, const std::map<std::string, std::size_t>& counts, double lambda);

/// Per-sample dot product of the domain's shrunk weights with the z-scores.
std::vector<double> fuse_samples(const ScoreMatrix& z, const WeightTable& weights,
                                 std::span<const std::string> domains);

/// Linear-interpolation quantile of an ascending-sorted sample, p in [0, 1].
double quantile_sorted(std::span<const double> sorted, double p);

/// Maps fused z-values onto [0, scale_max] by the global q_low/q_high
/// quantile stretch. When the stretch is narrower than epsilon every output
/// is scale_max / 2.
std::vector<double> percentile_rescale(std::span<const double> z_values, const FusionConfig& config);

/// Every intermediate of one fusion run.
struct FusionResult {
    DomainStats stats;
    ScoreMatrix z;
    WeightTable weights;
    std::vector<double> fused_z;
    std::vector<double> fused_score;
};

FusionResult fuse(const ScoreMatrix& scores, std::span<const std::string> domains, const FusionConfig& config);

/// Runs `fuse` and packages one FusedLabel per sample, recording the shrunk
/// weights of the sample's domain under the given expert ids.
std::vector<FusedLabel> fuse_pipeline(const ScoreMatrix& scores, std::span<const std::string> domains,
                                      std::span<const std::string> sample_ids,
                                      std::span<const std::string> expert_ids, const FusionConfig& config);

/// Sum of w_m^2 * sigma_m^2: squared-error risk of a linear combination of
/// unit-variance normalized scores with independent noise.
double expected_risk(std::span<const double> weights, std::span<const double> noise_vars);

/// Risk-minimizing simplex weights for `expected_risk`: w_m proportional to
/// 1 / sigma_m^2. A zero variance takes all the weight (split evenly if
/// several are zero).
std::vector<double> inverse_variance_weights(std::span<const double> noise_vars);

/// Risk change of shrinking one domain's weights toward the global mean:
/// -((1 - alpha)^2 / |D|) * sum_m (w_m - wbar_m)^2. Never positive.
double shrinkage_risk_delta(std::span<const double> domain_weights, std::span<const double> global_mean,
                            double alpha, std::size_t num_domains);

}  // namespace refinery::fusion
