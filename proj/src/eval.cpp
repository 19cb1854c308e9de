#include "refinery/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refinery/errors.hpp"
#include "refinery/fusion.hpp"

namespace refinery::eval {

namespace {

void require_pairs(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ComputeError("correlation arguments differ in length");
    if (x.size() < 2) throw ComputeError("correlation needs at least two points");
}

// Pairs among runs of equal values in a sorted range: sum of k(k-1)/2.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq equal) {
    std::uint64_t ties = 0;
    std::uint64_t run = 1;
    for (std::size_t i = 1; i < n; ++i) {
        if (equal(i - 1, i)) {
            ++run;
        } else {
            ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    return ties + run * (run - 1) / 2;
}

// Merge sort of ys that counts inversions (strictly decreasing pairs).
std::uint64_t count_swaps(std::vector<double>& ys, std::vector<double>& buffer, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = count_swaps(ys, buffer, lo, mid) + count_swaps(ys, buffer, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (ys[j] < ys[i]) {
            swaps += mid - i;
            buffer[k++] = ys[j++];
        } else {
            buffer[k++] = ys[i++];
        }
    }
    while (i < mid) buffer[k++] = ys[i++];
    while (j < hi) buffer[k++] = ys[j++];
    std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo), buffer.begin() + static_cast<std::ptrdiff_t>(hi),
              ys.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

}  // namespace

double pearson_r(std::span<const double> x, std::span<const double> y) {
    require_pairs(x, y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ComputeError("correlation undefined for constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Knight's algorithm: sort by (x, y), count x-ties and joint ties, then count
// discordant pairs as merge-sort inversions of y.
double kendall_tau(std::span<const double> x, std::span<const double> y) {
    require_pairs(x, y);
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });

    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const std::uint64_t tx = tied_pairs(n, [&](std::size_t a, std::size_t b) { return x[order[a]] == x[order[b]]; });
    const std::uint64_t txy = tied_pairs(n, [&](std::size_t a, std::size_t b) {
        return x[order[a]] == x[order[b]] && y[order[a]] == y[order[b]];
    });

    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
    std::vector<double> buffer(n);
    const std::uint64_t discordant = count_swaps(ys, buffer, 0, n);
    // ys is now sorted.
    const std::uint64_t ty = tied_pairs(n, [&](std::size_t a, std::size_t b) { return ys[a] == ys[b]; });

    if (tx == n0 || ty == n0) throw ComputeError("Kendall tau undefined: an argument is entirely tied");
    // Concordant = n0 - tx - ty + txy - discordant.
    const double numerator = static_cast<double>(n0 - tx - ty + txy) - 2.0 * static_cast<double>(discordant);
    const double denom = std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
    return std::clamp(numerator / denom, -1.0, 1.0);
}

std::vector<double> affine_rescale(std::span<const double> values, double lo, double hi) {
    std::vector<double> out(values.size());
    if (values.empty()) return out;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const double width = *mx - *mn;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = width > 0.0 ? lo + (values[i] - *mn) * (hi - lo) / width : (lo + hi) / 2.0;
    }
    return out;
}

double mean_squared_error(std::span<const double> estimate, std::span<const double> truth) {
    if (estimate.size() != truth.size()) throw ComputeError("MSE arguments differ in length");
    if (truth.empty()) throw ComputeError("MSE of an empty sample");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) acc += (estimate[i] - truth[i]) * (estimate[i] - truth[i]);
    return acc / static_cast<double>(truth.size());
}

ComparisonReport estimator_comparison(std::span<const double> latent,
                                      const std::vector<std::vector<double>>& expert_scores,
                                      std::span<const std::string> expert_names, std::span<const double> fused) {
    const std::size_t n = latent.size();
    if (fused.size() != n) throw ComputeError("fused scores and latent truth differ in length");
    if (expert_names.size() != expert_scores.size()) throw ComputeError("one name per expert required");
    if (expert_scores.empty()) throw ComputeError("no experts to compare");
    for (const auto& s : expert_scores) {
        if (s.size() != n) throw ComputeError("expert scores and latent truth differ in length");
    }
    const auto [lo_it, hi_it] = std::minmax_element(latent.begin(), latent.end());
    const double lo = *lo_it, hi = *hi_it;

    auto score = [&](const std::string& name, std::span<const double> est, bool rescale) {
        EstimatorScore s{name, 0.0, 0.0};
        s.mse = rescale ? mean_squared_error(affine_rescale(est, lo, hi), latent) : mean_squared_error(est, latent);
        s.pearson = pearson_r(est, latent);
        return s;
    };

    ComparisonReport report;
    std::vector<double> average(n, 0.0);
    for (std::size_t m = 0; m < expert_scores.size(); ++m) {
        report.experts.push_back(score(expert_names[m], expert_scores[m], true));
        for (std::size_t i = 0; i < n; ++i) average[i] += expert_scores[m][i];
    }
    for (auto& a : average) a /= static_cast<double>(expert_scores.size());
    report.naive_average = score("naive_average", average, true);
    report.fused = score("fused", fused, false);
    return report;
}

nlohmann::ordered_json to_json(const ComparisonReport& report) {
    auto entry = [](const EstimatorScore& s) {
        return nlohmann::ordered_json{{"name", s.name}, {"mse", s.mse}, {"pearson", s.pearson}};
    };
    nlohmann::ordered_json j;
    j["experts"] = nlohmann::ordered_json::array();
    for (const auto& e : report.experts) j["experts"].push_back(entry(e));
    j["naive_average"] = entry(report.naive_average);
    j["fused"] = entry(report.fused);
    return j;
}

DistributionSummary score_distribution_summary(std::span<const double> scores) {
    if (scores.empty()) throw ComputeError("distribution summary of an empty sample");
    DistributionSummary s;
    const double n = static_cast<double>(scores.size());
    s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    double var = 0.0;
    for (double x : scores) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / n);

    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    for (int pct : {5, 25, 50, 75, 95}) {
        s.quantiles[pct] = fusion::quantile_sorted(sorted, pct / 100.0);
    }

    constexpr std::size_t bins = 20;  // [0, 5] / 0.25
    for (std::size_t b = 0; b < bins; ++b) {
        s.histogram.push_back({kHistogramBinWidth * static_cast<double>(b),
                               kHistogramBinWidth * static_cast<double>(b + 1), 0});
    }
    for (double x : scores) {
        const double idx = std::floor(x / kHistogramBinWidth);
        const auto b = static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(bins - 1)));
        ++s.histogram[b].count;
    }
    return s;
}

nlohmann::ordered_json to_json(const DistributionSummary& summary) {
    nlohmann::ordered_json j;
    j["mean"] = summary.mean;
    j["std"] = summary.stddev;
    nlohmann::ordered_json q = nlohmann::ordered_json::object();
    for (const auto& [pct, v] : summary.quantiles) q["p" + std::to_string(pct)] = v;
    j["quantiles"] = std::move(q);
    j["histogram"] = nlohmann::ordered_json::array();
    for (const auto& b : summary.histogram) {
        j["histogram"].push_back({{"lower", b.lower}, {"upper", b.upper}, {"count", b.count}});
    }
    return j;
}

}  // namespace refinery::eval
