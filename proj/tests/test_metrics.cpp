#include <doctest.h>

#include <cmath>

#include "xilab/metrics.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace xilab;
using namespace xilab::metrics;

namespace {

// independent direct evaluation of the score formula, coded separately from
// the metrics module
double wr_direct(const std::vector<double>& map, const std::vector<std::uint8_t>& mask,
                 double alpha) {
    double mx = 0.0;
    for (double v : map) mx = std::max(mx, v);
    double mask_sum = 0.0, hits = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        mask_sum += mask[i];
        const double normed = (mx > 0.0 && map[i] > 0.0) ? map[i] / mx : 0.0;
        const double binary = normed > alpha ? 1.0 : 0.0;
        hits += binary * mask[i];
    }
    return 100.0 * hits / mask_sum;
}

} // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("norm_plus examples") {
    SUBCASE("all-negative map becomes zeros") {
        std::vector<double> m{-3.0, -0.1, -7.0};
        for (double v : norm_plus(m)) CHECK(v == 0.0);
    }
    SUBCASE("maximum positive value maps to one") {
        std::vector<double> m{2.0, 4.0, 1.0};
        auto n = norm_plus(m);
        CHECK(n[1] == 1.0);
        CHECK(n[0] == 0.5);
    }
    SUBCASE("direct formula") {
        std::vector<double> m{-1.0, 2.0, 4.0};
        auto n = norm_plus(m);
        CHECK(n[0] == 0.0);
        CHECK(n[1] == 0.5);
        CHECK(n[2] == 1.0);
    }
}

TEST_CASE("wr_score examples") {
    WrConfig cfg; // alpha 0.5

    SUBCASE("all-zero explanation scores zero") {
        std::vector<double> map(16, 0.0);
        std::vector<std::uint8_t> mask(16, 0);
        mask[3] = mask[5] = 1;
        CHECK(wr_score(map, mask, cfg) == 0.0);
    }
    SUBCASE("full overlap scores 100") {
        std::vector<double> map(16, 0.0);
        std::vector<std::uint8_t> mask(16, 0);
        map[2] = map[9] = 7.5; // both normalize to exactly 1
        mask[2] = mask[9] = 1;
        CHECK(wr_score(map, mask, cfg) == 100.0);
    }
    SUBCASE("2x2 hand-evaluated case gives 66.67") {
        std::vector<double> map{0.9, 0.2, 0.6, -1.0};
        std::vector<std::uint8_t> mask{1, 1, 1, 0};
        CHECK(wr_score(map, mask, cfg) == doctest::Approx(100.0 * 2.0 / 3.0).epsilon(1e-12));
        CHECK(wr_score(map, mask, cfg) == wr_direct(map, mask, 0.5));
    }
    SUBCASE("zero mask is rejected") {
        std::vector<double> map{1.0, 2.0};
        std::vector<std::uint8_t> mask{0, 0};
        CHECK_THROWS_AS(wr_score(map, mask, cfg), ConfigError);
    }
    SUBCASE("alpha outside (0,1) is rejected") {
        std::vector<double> map{1.0};
        std::vector<std::uint8_t> mask{1};
        CHECK_THROWS_AS(wr_score(map, mask, WrConfig{0.0}), ConfigError);
        CHECK_THROWS_AS(wr_score(map, mask, WrConfig{1.0}), ConfigError);
    }
}

TEST_CASE("wr_score matches the independent evaluator on random instances") {
    xilab::rng::Engine eng(13);
    for (int t = 0; t < 10; ++t) {
        const std::size_t n = 4 + rng::uniform_int(eng, 60);
        std::vector<double> map = oracles::rand_vec(n, eng, -2.0, 2.0);
        std::vector<std::uint8_t> mask(n, 0);
        bool any = false;
        for (auto& b : mask) {
            b = rng::uniform01(eng) < 0.4 ? 1 : 0;
            any |= b == 1;
        }
        if (!any) mask[0] = 1;
        const double alpha = rng::uniform(eng, 0.05, 0.95);
        CHECK(wr_score(map, mask, WrConfig{alpha}) == wr_direct(map, mask, alpha));
    }
}

TEST_CASE("wr invariants hold over 1000 randomized instances") {
    xilab::rng::Engine eng(17);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 4 + rng::uniform_int(eng, 40);
        std::vector<double> map = oracles::rand_vec(n, eng, -3.0, 3.0);
        std::vector<std::uint8_t> mask(n, 0);
        mask[rng::uniform_int(eng, n)] = 1;
        for (auto& b : mask)
            if (rng::uniform01(eng) < 0.3) b = 1;

        const double a1 = rng::uniform(eng, 0.05, 0.45);
        const double a2 = rng::uniform(eng, 0.55, 0.95);
        const double s1 = wr_score(map, mask, WrConfig{a1});
        const double s2 = wr_score(map, mask, WrConfig{a2});

        CHECK(s1 >= 0.0);
        CHECK(s1 <= 100.0);
        CHECK(s1 >= s2); // non-increasing in alpha

        // invariant to positive rescaling
        std::vector<double> scaled = map;
        const double factor = rng::uniform(eng, 0.1, 9.0);
        for (double& v : scaled) v *= factor;
        CHECK(wr_score(scaled, mask, WrConfig{a1}) == s1);
    }
}

TEST_CASE("binarization couples the score to off-mask pixels through the global max") {
    // raising an off-mask pixel above the previous maximum rescales the
    // normalization and can drop on-mask pixels below the threshold
    std::vector<double> map{0.9, 1.0, 0.0, 0.0};
    std::vector<std::uint8_t> mask{1, 0, 0, 0};
    WrConfig cfg; // alpha 0.5
    CHECK(wr_score(map, mask, cfg) == 100.0);
    map[1] = 2.0; // off-mask pixel doubles the max; 0.9/2 = 0.45 < alpha
    CHECK(wr_score(map, mask, cfg) == 0.0);
}

TEST_CASE("wr_table is deterministic and averages per explainer") {
    const auto& m = fixtures::briefly_trained_model();
    WrTableOptions opts;
    opts.samples = 6;
    opts.lime_samples = 2;
    opts.lime.n_samples = 120;
    const std::vector<explainers::ExplainerKind> kinds = {
        explainers::ExplainerKind::InputGrad, explainers::ExplainerKind::GradCam,
        explainers::ExplainerKind::IntGrad, explainers::ExplainerKind::Lime};

    WrTable a = wr_table(m, fixtures::decoy_test(), kinds, WrConfig{}, opts);
    WrTable b = wr_table(m, fixtures::decoy_test(), kinds, WrConfig{}, opts);
    REQUIRE(a.mean_wr.size() == 4);
    CHECK(a.mean_wr == b.mean_wr);
    CHECK(a.sample_counts[0] == 6);
    CHECK(a.sample_counts[3] == 2);
    for (double v : a.mean_wr) {
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
    }
}

TEST_CASE("wr_table surfaces the zero-mask contract on clean data") {
    const auto& m = fixtures::briefly_trained_model();
    WrTableOptions opts;
    opts.samples = 2;
    const std::vector<explainers::ExplainerKind> kinds = {explainers::ExplainerKind::InputGrad};
    CHECK_THROWS_AS(wr_table(m, fixtures::clean_test(), kinds, WrConfig{}, opts), ConfigError);
}

TEST_SUITE_END();
