#include <algorithm>
#include <cmath>
#include <span>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "refinery/errors.hpp"
#include "refinery/fusion.hpp"
#include "refinery/random.hpp"

using namespace refinery;
using namespace refinery::fusion;

namespace {

ScoreMatrix make_matrix(const std::vector<std::vector<double>>& rows) {
    ScoreMatrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t n = 0; n < rows.size(); ++n) {
        for (std::size_t k = 0; k < rows[n].size(); ++k) m(n, k) = rows[n][k];
    }
    return m;
}

struct Fixture {
    std::vector<std::vector<double>> rows;
    std::vector<std::string> domains;
};

Fixture random_fixture(std::uint64_t seed, std::size_t n, std::size_t experts, std::size_t domain_count) {
    Rng rng(seed);
    Fixture f;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = 5.0 * rng.uniform();
        std::vector<double> row;
        for (std::size_t k = 0; k < experts; ++k) {
            row.push_back(std::clamp(y + rng.normal(0.0, 0.3 + 0.4 * static_cast<double>(k)), 0.0, 5.0));
        }
        f.rows.push_back(row);
        f.domains.push_back("d" + std::to_string(rng.index(domain_count)));
    }
    return f;
}

}  // namespace

TEST_CASE("domain statistics use the population standard deviation") {
    const auto m = make_matrix({{1.0, 2.0}, {2.0, 2.0}, {3.0, 2.0}, {4.0, 1.0}});
    const std::vector<std::string> d{"a", "a", "a", "b"};
    const auto stats = compute_domain_stats(m, d);
    CHECK(stats.at("a").mean[0] == doctest::Approx(2.0));
    CHECK(stats.at("a").stddev[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
    CHECK(stats.at("a").stddev[1] == 0.0);
    CHECK(stats.at("a").count == 3);
    CHECK(stats.at("b").count == 1);
    CHECK(stats.at("b").stddev[0] == 0.0);
}

TEST_CASE("domain counts follow the labels") {
    const auto m = make_matrix({{1, 1}, {2, 2}, {3, 3}, {1, 2}, {2, 3}, {3, 1}, {4, 4}, {5, 5}});
    const std::vector<std::string> d{"x", "x", "x", "y", "y", "y", "y", "y"};
    const auto stats = compute_domain_stats(m, d);
    CHECK(stats.at("x").count == 3);
    CHECK(stats.at("y").count == 5);
}

TEST_CASE("incomplete matrix and empty corpus are rejected") {
    ScoreMatrix m(2, 2);
    m(0, 0) = 1.0;
    m(0, 1) = 1.0;
    m(1, 0) = 1.0;
    const std::vector<std::string> d{"a", "a"};
    CHECK_THROWS_AS(compute_domain_stats(m, d), ComputeError);
    CHECK_THROWS_AS(compute_domain_stats(ScoreMatrix(0, 3), {}), ComputeError);
}

TEST_CASE("z_normalize") {
    CHECK(z_normalize(2.0, 2.0, 0.5, 1e-3) == 0.0);
    CHECK(z_normalize(3.0, 2.0, 0.8165, 1e-3) == doctest::Approx(1.0 / 0.8175).epsilon(1e-12));
    CHECK(z_normalize(3.0, 2.0, 0.0, 1e-3) == doctest::Approx(1000.0));
}

TEST_CASE("identical experts get equal raw weights sig/eps") {
    const auto m = make_matrix({{1, 1, 1}, {2, 2, 2}, {4, 4, 4}});
    const std::vector<std::string> d{"a", "a", "a"};
    const auto raw = compute_raw_weights(m, d, 1e-3);
    const double sig = oracle::pop_sd({1, 2, 4});
    for (double w : raw.at("a")) CHECK(w == doctest::Approx(sig / 1e-3).epsilon(1e-12));
}

TEST_CASE("an expert constant within a domain gets raw weight zero") {
    const auto m = make_matrix({{1, 3, 1}, {2, 3, 2.5}, {4, 3, 3.5}});
    const std::vector<std::string> d{"a", "a", "a"};
    const auto raw = compute_raw_weights(m, d, 1e-3);
    CHECK(raw.at("a")[1] == 0.0);
    CHECK(raw.at("a")[0] > 0.0);
}

TEST_CASE("raw weights on a 4-sample two-expert disagreement fixture match the hand oracle") {
    const std::vector<std::vector<double>> rows{{1, 2}, {2, 2}, {3, 5}, {4, 3}};
    const std::vector<std::string> d{"a", "a", "a", "a"};
    const auto raw = compute_raw_weights(make_matrix(rows), d, 1e-3);
    const auto ref = oracle::fuse(rows, d);
    CHECK(std::abs(raw.at("a")[0] - ref.raw.at("a")[0]) < 1e-9);
    CHECK(std::abs(raw.at("a")[1] - ref.raw.at("a")[1]) < 1e-9);
}

TEST_CASE("shrinkage coefficient and limiting cases") {
    WeightMap raw{{"a", {3.0, 1.0, 0.0}}, {"b", {1.0, 1.0, 2.0}}};
    SUBCASE("N = lambda gives alpha = 1/2") {
        const auto t = shrink_weights(raw, {{"a", 100}, {"b", 100}}, 100.0);
        CHECK(t.alpha.at("a") == doctest::Approx(0.5));
    }
    SUBCASE("lambda = 0 keeps the raw proportions") {
        const auto t = shrink_weights(raw, {{"a", 10}, {"b", 10}}, 0.0);
        CHECK(t.shrunk.at("a")[0] == doctest::Approx(0.75));
        CHECK(t.shrunk.at("a")[1] == doctest::Approx(0.25));
        CHECK(t.shrunk.at("a")[2] == doctest::Approx(0.0));
    }
    SUBCASE("N = 0 collapses onto the global mean") {
        const auto t = shrink_weights(raw, {{"a", 0}, {"b", 10}}, 100.0);
        const double total = 2.0 + 1.0 + 1.0;  // w-bar = (2, 1, 1)
        CHECK(t.shrunk.at("a")[0] == doctest::Approx(2.0 / total));
        CHECK(t.shrunk.at("a")[1] == doctest::Approx(1.0 / total));
    }
    SUBCASE("every domain sums to one") {
        const auto t = shrink_weights(raw, {{"a", 37}, {"b", 5}}, 100.0);
        for (const auto& [d, w] : t.shrunk) CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-9);
    }
}

TEST_CASE("all-zero weights after shrinkage are degenerate") {
    WeightMap raw{{"a", {0.0, 0.0}}, {"b", {0.0, 0.0}}};
    CHECK_THROWS_AS(shrink_weights(raw, {{"a", 5}, {"b", 5}}, 100.0), ComputeError);
}

TEST_CASE("fuse_samples is the dot product with the domain weights") {
    const auto z = make_matrix({{1, 2, 3}, {1, 2, 3}});
    WeightTable t;
    t.shrunk = {{"eq", {1.0 / 3, 1.0 / 3, 1.0 / 3}}, {"one", {1.0, 0.0, 0.0}}};
    const std::vector<std::string> d{"eq", "one"};
    const auto out = fuse_samples(z, t, d);
    CHECK(out[0] == doctest::Approx(2.0));
    CHECK(out[1] == doctest::Approx(1.0));
    const std::vector<std::string> unknown{"eq", "missing"};
    CHECK_THROWS_AS(fuse_samples(z, t, unknown), ComputeError);
}

TEST_CASE("type-7 quantile") {
    const std::vector<double> v{1, 2, 3, 4, 5};
    CHECK(quantile_sorted(v, 0.0) == 1.0);
    CHECK(quantile_sorted(v, 1.0) == 5.0);
    CHECK(quantile_sorted(v, 0.5) == 3.0);
    CHECK(quantile_sorted(v, 0.05) == doctest::Approx(1.2));
    CHECK(quantile_sorted(v, 0.95) == doctest::Approx(4.8));
}

TEST_CASE("percentile rescale endpoints, midpoint and degenerate rule") {
    std::vector<double> z;
    for (int i = 0; i <= 20; ++i) z.push_back(i);
    const FusionConfig cfg;
    const auto s = percentile_rescale(z, cfg);
    // q_low = 1, q_high = 19 for 0..20.
    CHECK(s[1] == doctest::Approx(0.0));
    CHECK(s[19] == doctest::Approx(5.0));
    CHECK(s[10] == doctest::Approx(2.5));
    CHECK(s[0] == 0.0);
    CHECK(s[20] == 5.0);

    const std::vector<double> flat(7, 1.25);
    for (double v : percentile_rescale(flat, cfg)) CHECK(v == 2.5);
}

TEST_CASE("fusion config validation") {
    FusionConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = FusionConfig{};
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = FusionConfig{};
    cfg.q_low_pct = 0.9;
    cfg.q_high_pct = 0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("fuse_pipeline matches the step-by-step oracle") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto f = random_fixture(seed, 200, 3, 4);
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < f.rows.size(); ++i) ids.push_back("s" + std::to_string(i));
        const std::vector<std::string> experts{"e1", "e2", "e3"};
        const auto labels = fuse_pipeline(make_matrix(f.rows), f.domains, ids, experts, FusionConfig{});
        const auto ref = oracle::fuse(f.rows, f.domains);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            CHECK(labels[i].sample_id == ids[i]);
            CHECK(std::abs(labels[i].fused_score - ref.score[i]) < 1e-9);
            CHECK(std::abs(labels[i].fused_z - ref.zhat[i]) < 1e-9);
            const auto& w = labels[i].weights_used.at(f.domains[i]);
            CHECK(labels[i].weights_used.size() == 1);
            for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(w.at(experts[k]) - ref.shrunk.at(f.domains[i])[k]) < 1e-9);
        }
    }
}

TEST_CASE("three identical experts in one domain preserve the input ranking") {
    const std::vector<double> base{0.5, 3.0, 3.0, 1.0, 4.5, 2.0, 4.5, 0.0};
    std::vector<std::vector<double>> rows;
    for (double v : base) rows.push_back({v, v, v});
    const std::vector<std::string> d(base.size(), "only");
    const auto out = fuse(make_matrix(rows), d, FusionConfig{});
    for (std::size_t i = 0; i < base.size(); ++i) {
        for (std::size_t j = 0; j < base.size(); ++j) {
            if (base[i] < base[j]) CHECK(out.fused_score[i] <= out.fused_score[j]);
            if (base[i] == base[j]) CHECK(out.fused_score[i] == out.fused_score[j]);
        }
    }
}

TEST_CASE("fusion commutes with a permutation of the samples") {
    const auto f = random_fixture(99, 120, 3, 4);
    std::vector<std::size_t> perm(f.rows.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(7);
    rng.shuffle(std::span<std::size_t>(perm));
    Fixture g;
    for (auto p : perm) {
        g.rows.push_back(f.rows[p]);
        g.domains.push_back(f.domains[p]);
    }
    const auto a = fuse(make_matrix(f.rows), f.domains, FusionConfig{});
    const auto b = fuse(make_matrix(g.rows), g.domains, FusionConfig{});
    for (std::size_t i = 0; i < perm.size(); ++i) {
        CHECK(b.fused_score[i] == doctest::Approx(a.fused_score[perm[i]]).epsilon(1e-12));
    }
}

TEST_CASE("homoscedastic experts approach equal weights with many samples") {
    Rng rng(2024);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 20000; ++i) {
        const double y = rng.uniform() * 5.0;
        rows.push_back({y + rng.normal(0, 0.5), y + rng.normal(0, 0.5), y + rng.normal(0, 0.5)});
    }
    const std::vector<std::string> d(rows.size(), "a");
    const auto out = fuse(make_matrix(rows), d, FusionConfig{});
    for (double w : out.weights.shrunk.at("a")) CHECK(w == doctest::Approx(1.0 / 3).epsilon(0.03));
}

TEST_CASE("expected risk examples") {
    CHECK(expected_risk(std::vector<double>{1, 0, 0}, std::vector<double>{4, 1, 1}) == doctest::Approx(4.0));
    CHECK(expected_risk(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, std::vector<double>{1, 1, 1}) ==
          doctest::Approx(1.0 / 3));
    CHECK(expected_risk(std::vector<double>{0.2, 0.5, 0.3}, std::vector<double>{0, 0, 0}) == 0.0);
}

TEST_CASE("inverse-variance weights minimise risk over a simplex grid") {
    const std::vector<double> var{0.09, 0.36, 1.44};
    const auto w = inverse_variance_weights(var);
    const double best = expected_risk(w, var);
    double grid_min = 1e9;
    const int steps = 400;
    for (int i = 0; i <= steps; ++i) {
        for (int j = 0; i + j <= steps; ++j) {
            const std::vector<double> g{double(i) / steps, double(j) / steps, double(steps - i - j) / steps};
            grid_min = std::min(grid_min, expected_risk(g, var));
        }
    }
    CHECK(best <= grid_min + 1e-12);
    CHECK(w[0] == doctest::Approx((1 / 0.09) / (1 / 0.09 + 1 / 0.36 + 1 / 1.44)));
}

TEST_CASE("shrinkage risk delta examples") {
    const std::vector<double> wbar{1.0 / 3, 1.0 / 3, 1.0 / 3};
    CHECK(shrinkage_risk_delta(wbar, wbar, 0.3, 4) == 0.0);
    CHECK(shrinkage_risk_delta(std::vector<double>{0.6, 0.2, 0.2}, wbar, 1.0, 4) == 0.0);
    const double expected = -(0.25 / 7.0) * (std::pow(0.6 - 1.0 / 3, 2) + 2 * std::pow(0.2 - 1.0 / 3, 2));
    CHECK(shrinkage_risk_delta(std::vector<double>{0.6, 0.2, 0.2}, wbar, 0.5, 7) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(-0.00381).epsilon(1e-2));
}
