#pragma once

// Agreement metrics between critic scores and reference scores.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace refinery::eval {

/// Sample Pearson correlation. Throws ComputeError on length mismatch,
/// fewer than two points or a constant argument.
double pearson_r(std::span<const double> x, std::span<const double> y);

/// Kendall tau-b (tie-corrected), O(n log n). Throws ComputeError when
/// either argument is entirely tied.
double kendall_tau(std::span<const double> x, std::span<const double> y);

/// Min-max maps `values` onto [lo, hi]. A constant input maps to the midpoint.
std::vector<double> affine_rescale(std::span<const double> values, double lo, double hi);

double mean_squared_error(std::span<const double> estimate, std::span<const double> truth);

struct EstimatorScore {
    std::string name;
    double mse = 0.0;
    double pearson = 0.0;
};

struct ComparisonReport {
    std::vector<EstimatorScore> experts;
    EstimatorScore naive_average;
    EstimatorScore fused;
};

/// Compares each expert, the naive per-sample mean and the fused score
/// against the latent truth. Experts and the naive mean are min-max mapped
/// onto the latent's observed range before MSE; the fused score is used as
/// is. Pearson is reported on the unmapped values (it is affine invariant).
/// `expert_scores[m][n]` is expert m's score for sample n.
ComparisonReport estimator_comparison(std::span<const double> latent,
                                      const std::vector<std::vector<double>>& expert_scores,
                                      std::span<const std::string> expert_names, std::span<const double> fused);

nlohmann::ordered_json to_json(const ComparisonReport& report);

struct HistogramBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
};

struct DistributionSummary {
    double mean = 0.0;
    double stddev = 0.0;  // population
    std::map<int, double> quantiles;  // percentile -> value, for 5, 25, 50, 75, 95
    std::vector<HistogramBin> histogram;
};

inline constexpr double kHistogramBinWidth = 0.25;

/// Mean, std, quantiles and a histogram over [0, 5] with 0.25-wide bins; the
/// last bin is closed on the right and values outside [0, 5] are clamped
/// into the edge bins. Throws ComputeError on an empty input.
DistributionSummary score_distribution_summary(std::span<const double> scores);

nlohmann::ordered_json to_json(const DistributionSummary& summary);

}  // namespace refinery::eval
