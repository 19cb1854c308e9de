#pragma once

// Reference implementations used only by the tests. They are written
// straight from the formulas with plain loops and share no code with the
// library, so agreement between the two is meaningful.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;  // [sample][expert]

struct FusionOutput {
    std::map<std::string, std::vector<double>> mean, sd, raw, shrunk;
    std::vector<double> wbar;
    std::vector<double> zhat;
    std::vector<double> score;
};

inline double pop_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double pop_sd(const std::vector<double>& v) {
    const double m = pop_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

/// Linear interpolation between order statistics at position p*(n-1).
inline double type7_quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Domain-aware fusion computed step by step.
inline FusionOutput fuse(const Matrix& s, const std::vector<std::string>& domain, double eps = 1e-3,
                         double lambda = 100.0, double qlo = 0.05, double qhi = 0.95, double scale = 5.0) {
    FusionOutput out;
    const std::size_t n = s.size();
    const std::size_t m = s[0].size();
    std::set<std::string> labels(domain.begin(), domain.end());

    // Step 0: domain statistics, and Step 2: signal and residual spreads.
    std::map<std::string, double> count;
    for (const auto& d : labels) {
        out.mean[d].resize(m);
        out.sd[d].resize(m);
        out.raw[d].resize(m);
        for (std::size_t k = 0; k < m; ++k) {
            std::vector<double> col;
            std::vector<double> resid;
            for (std::size_t i = 0; i < n; ++i) {
                if (domain[i] != d) continue;
                double consensus = 0.0;
                for (std::size_t j = 0; j < m; ++j) consensus += s[i][j];
                consensus /= static_cast<double>(m);
                col.push_back(s[i][k]);
                resid.push_back(s[i][k] - consensus);
            }
            count[d] = static_cast<double>(col.size());
            out.mean[d][k] = pop_mean(col);
            out.sd[d][k] = pop_sd(col);
            out.raw[d][k] = pop_sd(col) / (pop_sd(resid) + eps);
        }
    }

    // Step 3: shrinkage toward the mean over domains.
    out.wbar.assign(m, 0.0);
    for (const auto& d : labels) {
        for (std::size_t k = 0; k < m; ++k) out.wbar[k] += out.raw[d][k] / static_cast<double>(labels.size());
    }
    for (const auto& d : labels) {
        const double a = count[d] / (count[d] + lambda);
        std::vector<double> w(m);
        double total = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            w[k] = a * out.raw[d][k] + (1.0 - a) * out.wbar[k];
            total += w[k];
        }
        for (auto& x : w) x /= total;
        out.shrunk[d] = w;
    }

    // Steps 1 and 4: z-scores and weighted fusion.
    out.zhat.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = domain[i];
        for (std::size_t k = 0; k < m; ++k) {
            const double z = (s[i][k] - out.mean[d][k]) / (out.sd[d][k] + eps);
            out.zhat[i] += out.shrunk[d][k] * z;
        }
    }

    // Step 5: global percentile stretch.
    const double lo = type7_quantile(out.zhat, qlo);
    const double hi = type7_quantile(out.zhat, qhi);
    out.score.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (hi - lo < eps) {
            out.score[i] = scale / 2.0;
        } else {
            double t = (out.zhat[i] - lo) / (hi - lo);
            t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
            out.score[i] = scale * t;
        }
    }
    return out;
}

/// Tie-corrected Kendall tau by counting every pair.
inline double kendall_pairs(const std::vector<double>& x, const std::vector<double>& y) {
    double concordant = 0.0, discordant = 0.0, ties_x = 0.0, ties_y = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0) {
                ties_x += 1.0;
            } else if (dy == 0.0) {
                ties_y += 1.0;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    return (concordant - discordant) /
           std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
}

/// Textbook sample correlation, sums of products about the means.
inline double pearson_direct(const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = pop_mean(x);
    const double my = pop_mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> central_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// CDF of clip(N(mu, sd^2), lo, hi): atoms at both bounds.
inline double clipped_normal_cdf(double x, double mu, double sd, double lo, double hi) {
    if (x < lo) return 0.0;
    if (x >= hi) return 1.0;
    if (sd == 0.0) return mu <= x ? 1.0 : 0.0;
    return standard_normal_cdf((x - mu) / sd);
}

/// Two-sided KS statistic of a sample against a CDF that may have atoms.
/// Both one-sided gaps are evaluated at every distinct observed value.
inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    std::size_t i = 0;
    while (i < sample.size()) {
        std::size_t j = i;
        while (j < sample.size() && sample[j] == sample[i]) ++j;
        const double f = cdf(sample[i]);
        // Left limit of the model CDF just below the value.
        const double f_left = cdf(std::nextafter(sample[i], -INFINITY));
        d = std::max(d, std::abs(static_cast<double>(j) / n - f));
        d = std::max(d, std::abs(f_left - static_cast<double>(i) / n));
        i = j;
    }
    return d;
}

}  // namespace oracle
